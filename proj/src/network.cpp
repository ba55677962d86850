#include "gseg/network.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "gseg/ops.hpp"

namespace gseg {

std::string_view model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::unet: return "unet";
    case ModelKind::inception_v3: return "inception_v3";
    case ModelKind::inception_v4: return "inception_v4";
    case ModelKind::resnet: return "resnet";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "unet") return ModelKind::unet;
  if (name == "inception_v3" || name == "inceptionv3" || name == "inception-v3") return ModelKind::inception_v3;
  if (name == "inception_v4" || name == "inceptionv4" || name == "inception-v4") return ModelKind::inception_v4;
  if (name == "resnet") return ModelKind::resnet;
  fail(ErrorCode::invalid_argument, "unknown model kind: " + std::string(name));
}

std::string_view layer_op_name(LayerOp op) {
  switch (op) {
    case LayerOp::input: return "input";
    case LayerOp::conv: return "conv";
    case LayerOp::conv_transpose: return "conv_transpose";
    case LayerOp::max_pool: return "max_pool";
    case LayerOp::avg_pool: return "avg_pool";
    case LayerOp::avg_pool_same: return "avg_pool_same";
    case LayerOp::hybrid_pool: return "hybrid_pool";
    case LayerOp::concat: return "concat";
    case LayerOp::dropout: return "dropout";
    case LayerOp::softmax: return "softmax";
  }
  return "unknown";
}

namespace {

class Builder {
 public:
  Builder(ModelKind kind, int rank, int width_scale) {
    require(rank == 2 || rank == 3, ErrorCode::invalid_argument, "rank must be 2 or 3");
    require(width_scale >= 1 && kBaseChannels[0] % width_scale == 0, ErrorCode::invalid_argument,
            "width_scale " + std::to_string(width_scale) + " does not divide the channel schedule");
    net_.kind = kind;
    net_.rank = rank;
    net_.width_scale = width_scale;
  }

  int level_channels(int level) const { return kBaseChannels[static_cast<std::size_t>(level)] / net_.width_scale; }
  int channels(int layer) const { return channels_[static_cast<std::size_t>(layer)]; }
  int rank() const { return net_.rank; }

  int input() {
    Layer l;
    l.name = "input";
    return push(std::move(l), kInputChannels);
  }

  int conv(int in, std::vector<int> kernel, int out_channels, std::string name, Stage stage, bool relu = true) {
    require(out_channels >= 1, ErrorCode::invalid_argument,
            "width_scale " + std::to_string(net_.width_scale) + " leaves layer " + name + " with no channels");
    Layer l;
    l.name = std::move(name);
    l.op = LayerOp::conv;
    l.inputs = {in};
    l.kernel = std::move(kernel);
    l.channels = out_channels;
    l.relu = relu;
    l.stage = stage;
    return push(std::move(l), out_channels);
  }

  int conv_cube(int in, int k, int out_channels, std::string name, Stage stage, bool relu = true) {
    return conv(in, std::vector<int>(static_cast<std::size_t>(net_.rank), k), out_channels, std::move(name), stage, relu);
  }

  int up(int in, int out_channels, std::string name) {
    Layer l;
    l.name = std::move(name);
    l.op = LayerOp::conv_transpose;
    l.inputs = {in};
    l.kernel.assign(static_cast<std::size_t>(net_.rank), 2);
    l.channels = out_channels;
    l.stage = Stage::decoder;
    return push(std::move(l), out_channels);
  }

  int unary(LayerOp op, int in, std::string name, Stage stage) {
    Layer l;
    l.name = std::move(name);
    l.op = op;
    l.inputs = {in};
    l.stage = stage;
    return push(std::move(l), op == LayerOp::hybrid_pool ? 2 * channels(in) : channels(in));
  }

  int concat(std::vector<int> ins, std::string name, Stage stage, bool residual = false) {
    Layer l;
    l.name = std::move(name);
    l.op = LayerOp::concat;
    int c = 0;
    for (int i : ins) c += channels(i);
    l.inputs = std::move(ins);
    l.stage = stage;
    l.residual = residual;
    return push(std::move(l), c);
  }

  // dropout -> 1x1 conv to the class count -> softmax
  void head(int in) {
    int x = unary(LayerOp::dropout, in, "head/dropout", Stage::head);
    x = conv_cube(x, 1, kClasses, "head/conv", Stage::head, false);
    net_.output = unary(LayerOp::softmax, x, "head/softmax", Stage::head);
  }

  void set_endpoint(int layer) { net_.encoder_endpoint = layer; }
  NetworkSpec finish() { return std::move(net_); }

 private:
  int push(Layer l, int c) {
    net_.layers.push_back(std::move(l));
    channels_.push_back(c);
    return static_cast<int>(net_.layers.size()) - 1;
  }

  NetworkSpec net_;
  std::vector<int> channels_;
};

std::string level_name(Stage stage, int level) {
  return (stage == Stage::encoder ? "enc" : "dec") + std::to_string(level);
}

// 1-kernel branch plus a 1-kernel reduction feeding a 3-kernel convolution.
int inception_v3_block(Builder& b, int x, int width, const std::string& p, Stage stage) {
  const int w2 = width / 2;
  const int w1 = width - w2;
  const int a = b.conv_cube(x, 1, w1, p + "/b1_1", stage);
  int c = b.conv_cube(x, 1, w2, p + "/b2_1", stage);
  c = b.conv_cube(c, 3, w2, p + "/b2_3", stage);
  return b.concat({a, c}, p + "/concat", stage);
}

// Seven convolutions over four branches, one of them behind a stride-1
// average pool.
int inception_v4_block1(Builder& b, int x, int width, const std::string& p, Stage stage) {
  const int w = width / 4;
  const int w1 = width - 3 * w;
  const int a = b.conv_cube(x, 1, w1, p + "/b1_1", stage);
  int c = b.conv_cube(x, 1, w, p + "/b2_1", stage);
  c = b.conv_cube(c, 3, w, p + "/b2_3", stage);
  int d = b.conv_cube(x, 1, w, p + "/b3_1", stage);
  d = b.conv_cube(d, 3, w, p + "/b3_3a", stage);
  d = b.conv_cube(d, 3, w, p + "/b3_3b", stage);
  int e = b.unary(LayerOp::avg_pool_same, x, p + "/b4_avg", stage);
  e = b.conv_cube(e, 1, w, p + "/b4_1", stage);
  return b.concat({a, c, d, e}, p + "/concat", stage);
}

// Factorised 7-tap branches: 1x7 then 7x1 (3D: 1x1x7 then 7x7x1) and the
// reverse order.
int inception_v4_block2(Builder& b, int x, int width, const std::string& p, Stage stage) {
  const int w = width / 3;
  const int w1 = width - 2 * w;
  const bool is3d = b.rank() == 3;
  const std::vector<int> thin = is3d ? std::vector<int>{1, 1, 7} : std::vector<int>{1, 7};
  const std::vector<int> wide = is3d ? std::vector<int>{7, 7, 1} : std::vector<int>{7, 1};
  const int a = b.conv_cube(x, 1, w1, p + "/b1_1", stage);
  int c = b.conv_cube(x, 1, w, p + "/b2_1", stage);
  c = b.conv(c, thin, w, p + "/b2_thin", stage);
  c = b.conv(c, wide, w, p + "/b2_wide", stage);
  int d = b.conv_cube(x, 1, w, p + "/b3_1", stage);
  d = b.conv(d, wide, w, p + "/b3_wide", stage);
  d = b.conv(d, thin, w, p + "/b3_thin", stage);
  return b.concat({a, c, d}, p + "/concat", stage);
}

int conv_group(Builder& b, int x, int width, const std::string& p, Stage stage) {
  for (int j = 0; j < 3; ++j) x = b.conv_cube(x, 3, width, p + "/conv" + std::to_string(j), stage);
  return x;
}

// Two 3-convolution groups; the first group's output is concatenated with
// the second's, then projected back to the group width.
int residual_level(Builder& b, int x, int width, const std::string& p, Stage stage) {
  const int g1 = conv_group(b, x, width, p + "/g1", stage);
  const int g2 = conv_group(b, g1, width, p + "/g2", stage);
  const int cat = b.concat({g1, g2}, p + "/residual", stage, true);
  return b.conv_cube(cat, 1, width, p + "/project", stage);
}

template <typename Block>
NetworkSpec build_encoder_decoder(ModelKind kind, int rank, int width_scale, LayerOp down, Block block) {
  Builder b(kind, rank, width_scale);
  int x = b.input();
  std::array<int, 5> skips{};
  for (int level = 0; level < 5; ++level) {
    if (level > 0) x = b.unary(down, x, level_name(Stage::encoder, level) + "/pool", Stage::encoder);
    x = block(b, x, level, b.level_channels(level), level_name(Stage::encoder, level), Stage::encoder);
    skips[static_cast<std::size_t>(level)] = x;
  }
  b.set_endpoint(x);
  x = b.unary(LayerOp::dropout, x, "bottleneck/dropout", Stage::encoder);
  for (int level = 3; level >= 0; --level) {
    const auto p = level_name(Stage::decoder, level);
    x = b.up(x, b.level_channels(level), p + "/up");
    x = b.concat({x, skips[static_cast<std::size_t>(level)]}, p + "/skip", Stage::decoder);
    x = block(b, x, level, b.level_channels(level), p, Stage::decoder);
  }
  b.head(x);
  return b.finish();
}

}  // namespace

NetworkSpec build_unet(int rank, int width_scale) {
  return build_encoder_decoder(ModelKind::unet, rank, width_scale, LayerOp::max_pool,
                               [](Builder& b, int x, int, int width, const std::string& p, Stage stage) {
                                 return conv_group(b, x, width, p, stage);
                               });
}

NetworkSpec build_inception_v3(int rank, int width_scale) {
  return build_encoder_decoder(ModelKind::inception_v3, rank, width_scale, LayerOp::hybrid_pool,
                               [](Builder& b, int x, int, int width, const std::string& p, Stage stage) {
                                 return inception_v3_block(b, x, width, p, stage);
                               });
}

NetworkSpec build_inception_v4(int rank, int width_scale) {
  return build_encoder_decoder(ModelKind::inception_v4, rank, width_scale, LayerOp::hybrid_pool,
                               [](Builder& b, int x, int level, int width, const std::string& p, Stage stage) {
                                 // Factorised 7-tap blocks at the middle resolutions.
                                 return (level == 1 || level == 2) ? inception_v4_block2(b, x, width, p, stage)
                                                                   : inception_v4_block1(b, x, width, p, stage);
                               });
}

NetworkSpec build_resnet(int rank, int width_scale) {
  return build_encoder_decoder(ModelKind::resnet, rank, width_scale, LayerOp::max_pool,
                               [](Builder& b, int x, int, int width, const std::string& p, Stage stage) {
                                 return residual_level(b, x, width, p, stage);
                               });
}

NetworkSpec build_network(ModelKind kind, int rank, int width_scale) {
  switch (kind) {
    case ModelKind::unet: return build_unet(rank, width_scale);
    case ModelKind::inception_v3: return build_inception_v3(rank, width_scale);
    case ModelKind::inception_v4: return build_inception_v4(rank, width_scale);
    case ModelKind::resnet: return build_resnet(rank, width_scale);
  }
  fail(ErrorCode::invalid_argument, "unknown model kind");
}

namespace {

Shape kernel_shape(const Layer& l, int in_channels) {
  Shape k(l.kernel.begin(), l.kernel.end());
  k.push_back(in_channels);
  k.push_back(l.channels);
  return k;
}

}  // namespace

std::vector<int> layer_in_channels(const NetworkSpec& net) {
  std::vector<int> out(net.layers.size(), 0);
  std::vector<int> produced(net.layers.size(), 0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    int in = l.inputs.empty() ? kInputChannels : 0;
    for (int j : l.inputs) in += produced[static_cast<std::size_t>(j)];
    out[i] = in;
    switch (l.op) {
      case LayerOp::conv:
      case LayerOp::conv_transpose: produced[i] = l.channels; break;
      case LayerOp::hybrid_pool: produced[i] = 2 * in; break;
      default: produced[i] = in; break;
    }
  }
  return out;
}

std::int64_t layer_parameter_count(const NetworkSpec& net, int layer) {
  const auto& l = net.layers.at(static_cast<std::size_t>(layer));
  if (l.op != LayerOp::conv && l.op != LayerOp::conv_transpose) return 0;
  const auto cin = layer_in_channels(net)[static_cast<std::size_t>(layer)];
  return element_count(kernel_shape(l, cin)) + l.channels;
}

std::int64_t parameter_count(const NetworkSpec& net) {
  const auto cin = layer_in_channels(net);
  std::int64_t n = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (l.op == LayerOp::conv || l.op == LayerOp::conv_transpose)
      n += element_count(kernel_shape(l, cin[i])) + l.channels;
  }
  return n;
}

std::vector<Shape> infer_shapes(const NetworkSpec& net, const Shape& input) {
  require(static_cast<int>(input.size()) == net.rank + 2, ErrorCode::shape,
          "input " + to_string(input) + " does not match network rank " + std::to_string(net.rank));
  require(input.back() == kInputChannels, ErrorCode::shape, "input must have 4 channels, got " + to_string(input));
  validate_shape(input);
  std::vector<Shape> shapes(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const Shape& in = l.inputs.empty() ? input : shapes[static_cast<std::size_t>(l.inputs[0])];
    switch (l.op) {
      case LayerOp::input: shapes[i] = input; break;
      case LayerOp::conv:
        for (std::size_t a = 0; a < l.kernel.size(); ++a) {
          require(l.kernel[a] < 7 || in[a + 1] >= 7, ErrorCode::shape,
                  "layer " + l.name + " applies a 7-tap kernel to spatial extent " + std::to_string(in[a + 1]));
        }
        shapes[i] = ops::conv_output_shape(in, kernel_shape(l, static_cast<int>(in.back())), 1);
        break;
      case LayerOp::conv_transpose:
        shapes[i] = ops::conv_transpose_output_shape(in, kernel_shape(l, static_cast<int>(in.back())));
        break;
      case LayerOp::max_pool:
      case LayerOp::avg_pool: shapes[i] = ops::pool_output_shape(in, 2); break;
      case LayerOp::hybrid_pool:
        shapes[i] = ops::pool_output_shape(in, 2);
        shapes[i].back() *= 2;
        break;
      case LayerOp::concat: {
        Shape s = in;
        s.back() = 0;
        for (int j : l.inputs) {
          const auto& sj = shapes[static_cast<std::size_t>(j)];
          require(std::equal(sj.begin(), sj.end() - 1, in.begin()), ErrorCode::shape,
                  "layer " + l.name + " concatenates " + to_string(sj) + " with " + to_string(in));
          s.back() += sj.back();
        }
        shapes[i] = std::move(s);
        break;
      }
      case LayerOp::avg_pool_same:
      case LayerOp::dropout:
      case LayerOp::softmax: shapes[i] = in; break;
    }
  }
  return shapes;
}

int count_convolutions(const NetworkSpec& net, Stage stage) {
  return static_cast<int>(std::count_if(net.layers.begin(), net.layers.end(), [stage](const Layer& l) {
    return l.op == LayerOp::conv && l.stage == stage;
  }));
}

std::vector<int> residual_skip_spans(const NetworkSpec& net) {
  std::vector<int> spans;
  for (const auto& l : net.layers) {
    if (!l.residual || l.inputs.size() != 2) continue;
    const int source = l.inputs[0];
    int node = l.inputs[1];
    int convs = 0;
    while (node != source && node > 0) {
      const auto& n = net.layers[static_cast<std::size_t>(node)];
      if (n.op == LayerOp::conv) ++convs;
      require(n.inputs.size() == 1, ErrorCode::internal, "residual path branches at " + n.name);
      node = n.inputs[0];
    }
    spans.push_back(node == source ? convs : -1);
  }
  return spans;
}

std::string summary(const NetworkSpec& net, const Shape& input) {
  const auto shapes = infer_shapes(net, input);
  std::ostringstream os;
  os << "# " << model_name(net.kind) << ' ' << net.rank << "d width_scale=" << net.width_scale << '\n';
  os << std::left << std::setw(28) << "layer" << std::setw(16) << "op" << std::setw(24) << "output" << "params\n";
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    os << std::setw(28) << l.name << std::setw(16) << layer_op_name(l.op) << std::setw(24) << to_string(shapes[i])
       << layer_parameter_count(net, static_cast<int>(i)) << '\n';
  }
  os << "total_params " << parameter_count(net) << '\n';
  os << "encoder_endpoint " << to_string(shapes[static_cast<std::size_t>(net.encoder_endpoint)]) << '\n';
  os << "encoder_convs " << count_convolutions(net, Stage::encoder) << '\n';
  os << "decoder_convs " << count_convolutions(net, Stage::decoder) << '\n';
  return os.str();
}

template <typename T>
ParameterStore<T> init_parameters(const NetworkSpec& net, Rng& rng) {
  const auto cin = layer_in_channels(net);
  ParameterStore<T> params;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (l.op != LayerOp::conv && l.op != LayerOp::conv_transpose) continue;
    params.add(l.name + "/kernel", he_uniform_init<T>(kernel_shape(l, cin[i]), rng));
    params.add(l.name + "/bias", Tensor<T>(Shape{l.channels}));
  }
  return params;
}

namespace {

template <typename T>
std::vector<Var> run_layers(const NetworkSpec& net, ParameterStore<T>& params, Tape<T>& tape, Var x,
                            const ForwardOptions& options) {
  infer_shapes(net, tape.value(x).shape());
  std::vector<Var> vars(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const Var in = l.inputs.empty() ? x : vars[static_cast<std::size_t>(l.inputs[0])];
    switch (l.op) {
      case LayerOp::input: vars[i] = x; break;
      case LayerOp::conv: {
        Var k = tape.parameter(params.get(l.name + "/kernel"));
        Var b = tape.parameter(params.get(l.name + "/bias"));
        vars[i] = ops::conv(tape, in, k, b, 1);
        if (l.relu) vars[i] = ops::relu(tape, vars[i]);
        break;
      }
      case LayerOp::conv_transpose: {
        Var k = tape.parameter(params.get(l.name + "/kernel"));
        Var b = tape.parameter(params.get(l.name + "/bias"));
        vars[i] = ops::conv_transpose(tape, in, k, b);
        break;
      }
      case LayerOp::max_pool: vars[i] = ops::pool(tape, in, ops::PoolMode::max, 2); break;
      case LayerOp::avg_pool: vars[i] = ops::pool(tape, in, ops::PoolMode::avg, 2); break;
      case LayerOp::avg_pool_same: vars[i] = ops::avg_pool_same(tape, in, 3); break;
      case LayerOp::hybrid_pool: vars[i] = ops::hybrid_pool(tape, in); break;
      case LayerOp::concat: {
        std::vector<Var> parts;
        for (int j : l.inputs) parts.push_back(vars[static_cast<std::size_t>(j)]);
        vars[i] = ops::concat<T>(tape, parts);
        break;
      }
      case LayerOp::dropout: {
        const bool active = options.training && options.dropout_rate > 0.0;
        require(!active || options.rng != nullptr, ErrorCode::invalid_argument, "training dropout needs an rng");
        Rng unused;
        vars[i] = ops::dropout(tape, in, options.dropout_rate, options.training, active ? *options.rng : unused);
        break;
      }
      case LayerOp::softmax: vars[i] = ops::softmax(tape, in); break;
    }
  }
  return vars;
}

}  // namespace

template <typename T>
Var forward(const NetworkSpec& net, ParameterStore<T>& params, Tape<T>& tape, Var x, const ForwardOptions& options) {
  return run_layers(net, params, tape, x, options)[static_cast<std::size_t>(net.output)];
}

template <typename T>
Tensor<T> predict(const NetworkSpec& net, ParameterStore<T>& params, const Tensor<T>& x) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  return tape.value(forward(net, params, tape, in, ForwardOptions{}));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> predict_with_endpoint(const NetworkSpec& net, ParameterStore<T>& params,
                                                      const Tensor<T>& x) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  const auto vars = run_layers(net, params, tape, in, ForwardOptions{});
  return {tape.value(vars[static_cast<std::size_t>(net.output)]),
          tape.value(vars[static_cast<std::size_t>(net.encoder_endpoint)])};
}

template ParameterStore<float> init_parameters(const NetworkSpec&, Rng&);
template ParameterStore<double> init_parameters(const NetworkSpec&, Rng&);
template Var forward(const NetworkSpec&, ParameterStore<float>&, Tape<float>&, Var, const ForwardOptions&);
template Var forward(const NetworkSpec&, ParameterStore<double>&, Tape<double>&, Var, const ForwardOptions&);
template Tensor<float> predict(const NetworkSpec&, ParameterStore<float>&, const Tensor<float>&);
template Tensor<double> predict(const NetworkSpec&, ParameterStore<double>&, const Tensor<double>&);
template std::pair<Tensor<float>, Tensor<float>> predict_with_endpoint(const NetworkSpec&, ParameterStore<float>&,
                                                                       const Tensor<float>&);
template std::pair<Tensor<double>, Tensor<double>> predict_with_endpoint(const NetworkSpec&, ParameterStore<double>&,
                                                                         const Tensor<double>&);

}  // namespace gseg
