#pragma once

// Declarative encoder-decoder networks (UNet, Inception-v3, Inception-v4,
// ResNet) at 2 or 3 spatial dimensions.
//
// The base channel schedule per resolution level is {16, 32, 64, 128, 256},
// divided by width_scale. Four 2x pooling steps take a 128-per-axis input to
// an 8-per-axis encoder endpoint with 256 channels at width_scale 1.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gseg/autodiff.hpp"

namespace gseg {

enum class ModelKind { unet, inception_v3, inception_v4, resnet };

std::string_view model_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

inline constexpr std::array<int, 5> kBaseChannels = {16, 32, 64, 128, 256};
inline constexpr int kInputChannels = 4;
inline constexpr int kClasses = 4;

enum class LayerOp {
  input,
  conv,            // same-padded, stride 1, optional ReLU
  conv_transpose,  // kernel 2, stride 2
  max_pool,
  avg_pool,
  avg_pool_same,   // window 3, stride 1
  hybrid_pool,
  concat,
  dropout,
  softmax,
};

std::string_view layer_op_name(LayerOp op);

enum class Stage { input, encoder, decoder, head };

struct Layer {
  std::string name;
  LayerOp op = LayerOp::input;
  std::vector<int> inputs;
  std::vector<int> kernel;  // spatial kernel extents (conv / conv_transpose)
  int channels = 0;         // output channels (conv / conv_transpose)
  bool relu = false;
  Stage stage = Stage::input;
  bool residual = false;  // concat joining two consecutive convolution groups
};

struct NetworkSpec {
  ModelKind kind = ModelKind::unet;
  int rank = 3;
  int width_scale = 1;
  std::vector<Layer> layers;
  int encoder_endpoint = -1;
  int output = -1;
};

NetworkSpec build_unet(int rank, int width_scale);
NetworkSpec build_inception_v3(int rank, int width_scale);
NetworkSpec build_inception_v4(int rank, int width_scale);
NetworkSpec build_resnet(int rank, int width_scale);
NetworkSpec build_network(ModelKind kind, int rank, int width_scale);

// Symbolic shape inference for an input [batch, spatial..., 4]; allocates no
// weights. Throws on shapes that do not fit through the pooling pyramid or
// on spatial extents smaller than a factorised 7-tap kernel.
std::vector<Shape> infer_shapes(const NetworkSpec& net, const Shape& input);

std::vector<int> layer_in_channels(const NetworkSpec& net);
std::int64_t layer_parameter_count(const NetworkSpec& net, int layer);
std::int64_t parameter_count(const NetworkSpec& net);

int count_convolutions(const NetworkSpec& net, Stage stage);

// For each residual concat, the number of convolutions between the skip's
// source and the concat's other input.
std::vector<int> residual_skip_spans(const NetworkSpec& net);

// One line per layer: name, op, output shape, parameter count.
std::string summary(const NetworkSpec& net, const Shape& input);

// Parameters "<layer>/kernel" and "<layer>/bias" in layer order; kernels are
// He-uniform, biases zero.
template <typename T>
ParameterStore<T> init_parameters(const NetworkSpec& net, Rng& rng);

struct ForwardOptions {
  bool training = false;
  double dropout_rate = 0.0;
  Rng* rng = nullptr;  // required when training with dropout
};

// Records the network on the tape and returns the softmax probabilities.
template <typename T>
Var forward(const NetworkSpec& net, ParameterStore<T>& params, Tape<T>& tape, Var x, const ForwardOptions& options);

// Evaluation-mode forward pass.
template <typename T>
Tensor<T> predict(const NetworkSpec& net, ParameterStore<T>& params, const Tensor<T>& x);

// Forward pass that also returns the encoder endpoint activation.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> predict_with_endpoint(const NetworkSpec& net, ParameterStore<T>& params,
                                                      const Tensor<T>& x);

}  // namespace gseg
