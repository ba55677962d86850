/* C interface to the segmentation engine.
 *
 * Every function returns a gseg_status; on failure a human-readable message
 * is available from gseg_last_error() on the same thread. Status values
 * double as the command-line tool's exit codes.
 */
#ifndef GSEG_H
#define GSEG_H

#include <stddef.h>
#include <stdint.h>

#if defined(GSEG_BUILDING_LIBRARY)
#define GSEG_API __attribute__((visibility("default")))
#else
#define GSEG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gseg_status {
  GSEG_OK = 0,
  GSEG_ERR_USAGE = 2,
  GSEG_ERR_IO = 3,
  GSEG_ERR_FORMAT = 4,
  GSEG_ERR_INVALID_ARGUMENT = 5,
  GSEG_ERR_SHAPE = 6,
  GSEG_ERR_CHECKSUM = 7,
  GSEG_ERR_VERSION = 8,
  GSEG_ERR_CHECK_FAILED = 9,
  GSEG_ERR_INTERNAL = 10
} gseg_status;

typedef struct gseg_config gseg_config;
typedef struct gseg_model gseg_model;
typedef struct gseg_volume gseg_volume;

GSEG_API const char* gseg_last_error(void);
GSEG_API const char* gseg_version(void);

/* ---- configuration (key = value; see the README for keys) ---- */
GSEG_API gseg_status gseg_config_create(gseg_config** out);
GSEG_API void gseg_config_destroy(gseg_config* config);
GSEG_API gseg_status gseg_config_set(gseg_config* config, const char* key, const char* value);
GSEG_API gseg_status gseg_config_load_file(gseg_config* config, const char* path);
/* Copies the canonical text form (NUL-terminated) if it fits; *needed gets the size including NUL. */
GSEG_API gseg_status gseg_config_to_text(const gseg_config* config, char* buf, size_t capacity, size_t* needed);

/* ---- data ---- */
/* Writes `count` synthetic cases <out_dir>/<id>/<id>_{flair,t1,t1ce,t2,seg}.nii. */
GSEG_API gseg_status gseg_phantom_dataset(const char* out_dir, int count, int size, uint64_t seed);
/* Normalises and centre-crops every case to spatial^3; writes <id>/<id>_x.nii (float32 [d,d,d,4])
 * and <id>/<id>_y.nii (uint8 one-hot [d,d,d,4]). */
GSEG_API gseg_status gseg_preprocess(const char* dataset_dir, const char* out_dir, int spatial, size_t* n_cases);
/* Cuts every preprocessed volume into axial slices <id>_s<k>/<id>_s<k>_{x,y}.nii. */
GSEG_API gseg_status gseg_slices(const char* preprocessed_dir, const char* out_dir, size_t* n_slices);

/* ---- training ---- */
/* Trains on a raw dataset directory. Writes <out_dir>/history.csv (flushed every row) and
 * <out_dir>/checkpoint.gseg (every epoch); holds <out_dir>/.lock while running. With
 * resume != 0 an existing checkpoint is continued. */
GSEG_API gseg_status gseg_train(const gseg_config* config, const char* dataset_dir, const char* out_dir, int resume);
/* k-fold cross-validation; writes <out_dir>/kfold.csv with one row per fold plus mean and std. */
GSEG_API gseg_status gseg_kfold(const gseg_config* config, const char* dataset_dir, const char* out_dir, int k);

/* ---- models ---- */
GSEG_API gseg_status gseg_model_load(const char* checkpoint_path, gseg_model** out);
GSEG_API void gseg_model_destroy(gseg_model* model);
/* Either output path may be NULL. CSV columns: case_id,class,dice,iou,hausdorff,accuracy. */
GSEG_API gseg_status gseg_evaluate(const gseg_model* model, const char* dataset_dir, const char* csv_path,
                                   const char* json_path, double* mean_foreground_dice);
/* Writes the predicted mask (uint8, labels 0/1/2/4) for one case on its original grid. */
GSEG_API gseg_status gseg_segment(const gseg_model* model, const char* dataset_dir, const char* case_id,
                                  const char* out_path);

/* ---- volumes ---- */
GSEG_API gseg_status gseg_volume_read(const char* path, gseg_volume** out);
GSEG_API void gseg_volume_destroy(gseg_volume* volume);
GSEG_API size_t gseg_volume_rank(const gseg_volume* volume);
GSEG_API int64_t gseg_volume_extent(const gseg_volume* volume, size_t axis);
GSEG_API size_t gseg_volume_size(const gseg_volume* volume);
GSEG_API const float* gseg_volume_data(const gseg_volume* volume);

/* ---- diagnostics ---- */
/* Runs the finite-difference suite; GSEG_ERR_CHECK_FAILED when the maximum relative
 * error reaches the tolerance. `log` (may be NULL) receives one line per case. */
GSEG_API gseg_status gseg_gradcheck(uint64_t seed, double* max_rel_error, void (*log)(const char* line, void* user),
                                    void* user);
/* Concatenates history CSVs into one table with a leading `model` column. */
GSEG_API gseg_status gseg_report(const char* const* inputs, size_t n_inputs, const char* out_path, size_t* n_rows);
GSEG_API gseg_status gseg_network_summary(const char* model, int rank, int width_scale, int spatial, char* buf,
                                          size_t capacity, size_t* needed);

#ifdef __cplusplus
}
#endif

#endif /* GSEG_H */
