// Command-line front end; everything goes through the C API.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gseg/gseg.h"

namespace {

int report_status(gseg_status st) {
  if (st != GSEG_OK) std::fprintf(stderr, "gseg: error: %s\n", gseg_last_error());
  return static_cast<int>(st);
}

struct ConfigHandle {
  gseg_config* ptr = nullptr;
  ConfigHandle() { gseg_config_create(&ptr); }
  ~ConfigHandle() { gseg_config_destroy(ptr); }
};

struct ModelHandle {
  gseg_model* ptr = nullptr;
  ~ModelHandle() { gseg_model_destroy(ptr); }
};

void print_line(const char* line, void*) { std::printf("%s\n", line); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brain-tumour segmentation engine: phantoms, preprocessing, training, evaluation."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(gseg_version()));

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Write a synthetic dataset of nested-ellipsoid tumour phantoms");
  std::string ph_out;
  int ph_count = 4, ph_size = 32;
  std::uint64_t ph_seed = 0;
  phantom->add_option("--out", ph_out, "Dataset directory to create")->required();
  phantom->add_option("--count", ph_count, "Number of cases")->capture_default_str();
  phantom->add_option("--size", ph_size, "Grid extent per axis")->capture_default_str();
  phantom->add_option("--seed", ph_seed, "Random seed")->capture_default_str();

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "Normalise, crop and one-hot encode a dataset");
  std::string pp_data, pp_out;
  int pp_spatial = 32;
  prep->add_option("--data", pp_data, "Dataset directory")->required();
  prep->add_option("--out", pp_out, "Output directory")->required();
  prep->add_option("--spatial", pp_spatial, "Cubic crop extent")->capture_default_str();

  // slices
  auto* slices = app.add_subcommand("slices", "Export axial 2D slices of preprocessed volumes");
  std::string sl_data, sl_out;
  slices->add_option("--data", sl_data, "Preprocessed directory")->required();
  slices->add_option("--out", sl_out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a model (writes history.csv and checkpoint.gseg)");
  std::string tr_data, tr_out, tr_config;
  bool tr_resume = false, tr_no_time = false;
  int tr_kfold = 0;
  std::map<std::string, std::string> overrides;
  train->add_option("--data", tr_data, "Dataset directory")->required();
  train->add_option("--out", tr_out, "Run directory")->required();
  train->add_option("--config", tr_config, "Config file of key = value lines");
  train->add_flag("--resume", tr_resume, "Continue from <out>/checkpoint.gseg if present");
  train->add_flag("--no-time", tr_no_time, "Write 0 in the seconds column (reproducible histories)");
  train->add_option("--kfold", tr_kfold, "Run k-fold cross-validation instead of a single training run");
  const std::vector<std::pair<std::string, std::string>> keyed = {
      {"--model", "model"},           {"--rank", "rank"},
      {"--width-scale", "width_scale"}, {"--spatial", "spatial"},
      {"--batch", "batch"},           {"--lr", "lr"},
      {"--epochs", "epochs"},         {"--max-steps", "max_steps"},
      {"--dropout", "dropout"},       {"--gamma", "gamma"},
      {"--class-weighting", "class_weighting"}, {"--augment-ratio", "augment_ratio"},
      {"--val-fraction", "val_fraction"}, {"--seed", "seed"},
      {"--precision", "precision"},
  };
  for (const auto& [flag, key] : keyed) train->add_option(flag, overrides[key], "Overrides config key '" + key + "'");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_csv, ev_json;
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", ev_data, "Dataset directory")->required();
  eval->add_option("--csv", ev_csv, "Per-case metrics CSV");
  eval->add_option("--json", ev_json, "Per-case metrics JSON");

  // segment
  auto* segment = app.add_subcommand("segment", "Write a predicted mask (labels 0,1,2,4) as .nii");
  std::string sg_ckpt, sg_data, sg_case, sg_out;
  segment->add_option("--checkpoint", sg_ckpt, "Checkpoint file")->required();
  segment->add_option("--data", sg_data, "Dataset directory")->required();
  segment->add_option("--case", sg_case, "Case id")->required();
  segment->add_option("--out", sg_out, "Output .nii path")->required();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::uint64_t gc_seed = 0;
  bool gc_verbose = false;
  gradcheck->add_option("--seed", gc_seed, "Random seed")->capture_default_str();
  gradcheck->add_flag("--verbose", gc_verbose, "Print every case");

  // report
  auto* report = app.add_subcommand("report", "Merge history CSVs into one curve table");
  std::vector<std::string> rp_inputs;
  std::string rp_out;
  report->add_option("--input", rp_inputs, "History CSV (repeatable)")->required();
  report->add_option("--out", rp_out, "Merged CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return GSEG_ERR_USAGE;
  }

  if (phantom->parsed()) {
    const int st = report_status(gseg_phantom_dataset(ph_out.c_str(), ph_count, ph_size, ph_seed));
    if (st == 0) std::printf("wrote %d cases to %s\n", ph_count, ph_out.c_str());
    return st;
  }
  if (prep->parsed()) {
    size_t n = 0;
    const int st = report_status(gseg_preprocess(pp_data.c_str(), pp_out.c_str(), pp_spatial, &n));
    if (st == 0) std::printf("preprocessed %zu cases into %s\n", n, pp_out.c_str());
    return st;
  }
  if (slices->parsed()) {
    size_t n = 0;
    const int st = report_status(gseg_slices(sl_data.c_str(), sl_out.c_str(), &n));
    if (st == 0) std::printf("wrote %zu slices to %s\n", n, sl_out.c_str());
    return st;
  }
  if (train->parsed()) {
    ConfigHandle cfg;
    // default < config file < flags
    if (!tr_config.empty())
      if (int st = report_status(gseg_config_load_file(cfg.ptr, tr_config.c_str()))) return st;
    for (const auto& [flag, key] : keyed) {
      if (train->count(flag) == 0) continue;
      if (int st = report_status(gseg_config_set(cfg.ptr, key.c_str(), overrides[key].c_str()))) return st;
    }
    if (tr_no_time)
      if (int st = report_status(gseg_config_set(cfg.ptr, "record_time", "false"))) return st;
    if (tr_kfold > 0) {
      const int st = report_status(gseg_kfold(cfg.ptr, tr_data.c_str(), tr_out.c_str(), tr_kfold));
      if (st == 0) std::printf("k-fold results in %s/kfold.csv\n", tr_out.c_str());
      return st;
    }
    const int st = report_status(gseg_train(cfg.ptr, tr_data.c_str(), tr_out.c_str(), tr_resume ? 1 : 0));
    if (st == 0) std::printf("training finished; see %s/history.csv\n", tr_out.c_str());
    return st;
  }
  if (eval->parsed()) {
    ModelHandle m;
    if (int st = report_status(gseg_model_load(ev_ckpt.c_str(), &m.ptr))) return st;
    double dice = 0.0;
    const int st = report_status(gseg_evaluate(m.ptr, ev_data.c_str(), ev_csv.empty() ? nullptr : ev_csv.c_str(),
                                               ev_json.empty() ? nullptr : ev_json.c_str(), &dice));
    if (st == 0) std::printf("mean foreground dice %.6f\n", dice);
    return st;
  }
  if (segment->parsed()) {
    ModelHandle m;
    if (int st = report_status(gseg_model_load(sg_ckpt.c_str(), &m.ptr))) return st;
    return report_status(gseg_segment(m.ptr, sg_data.c_str(), sg_case.c_str(), sg_out.c_str()));
  }
  if (gradcheck->parsed()) {
    double worst = 0.0;
    const gseg_status st = gseg_gradcheck(gc_seed, &worst, gc_verbose ? print_line : nullptr, nullptr);
    if (st == GSEG_OK || st == GSEG_ERR_CHECK_FAILED) std::printf("max relative error %.3e\n", worst);
    return report_status(st);
  }
  if (report->parsed()) {
    std::vector<const char*> paths;
    for (const auto& p : rp_inputs) paths.push_back(p.c_str());
    size_t rows = 0;
    const int st = report_status(gseg_report(paths.data(), paths.size(), rp_out.c_str(), &rows));
    if (st == 0) std::printf("merged %zu rows into %s\n", rows, rp_out.c_str());
    return st;
  }
  return GSEG_ERR_USAGE;
}
