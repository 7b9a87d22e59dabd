#include "gradconceal/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gradconceal/errors.hpp"
#include "json.hpp"

namespace gc::nn {

using nlohmann::json;

ArchSpec ArchSpec::mlp(std::vector<std::size_t> widths, Shape input_shape) {
  ArchSpec a;
  a.name = "mlp";
  if (widths.empty()) throw ConfigError("mlp needs at least one width");
  a.input_shape = input_shape.empty() ? Shape{widths.front()} : std::move(input_shape);
  a.num_classes = widths.back();
  a.widths = std::move(widths);
  return a;
}

ArchSpec ArchSpec::smallcnn(Shape input_shape, std::vector<std::size_t> channels, std::size_t num_classes) {
  ArchSpec a;
  a.name = "smallcnn";
  a.input_shape = std::move(input_shape);
  a.channels = std::move(channels);
  a.num_classes = num_classes;
  return a;
}

std::string ArchSpec::to_text() const {
  json j;
  j["arch"] = name;
  j["input_shape"] = input_shape;
  j["classes"] = num_classes;
  if (name == "mlp") j["widths"] = widths;
  if (name == "smallcnn") j["channels"] = channels;
  return j.dump();
}

ArchSpec ArchSpec::from_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("architecture descriptor is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("arch")) throw ConfigError("architecture descriptor needs an 'arch' field");
  try {
    const std::string name = j.at("arch").get<std::string>();
    if (name == "mlp") {
      return mlp(j.at("widths").get<std::vector<std::size_t>>(), j.value("input_shape", Shape{}));
    }
    if (name == "smallcnn") {
      return smallcnn(j.value("input_shape", Shape{28, 28, 1}),
                      j.value("channels", std::vector<std::size_t>{8, 16}), j.value("classes", std::size_t{10}));
    }
    throw ConfigError("unknown architecture '" + name + "' (expected mlp or smallcnn)");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad architecture descriptor: ") + e.what());
  }
}

std::string_view layer_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool2x2: return "max_pool2x2";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

Model::Model(ArchSpec arch, std::vector<Block> blocks, std::vector<Parameter> params)
    : arch_(std::move(arch)), blocks_(std::move(blocks)), params_(std::move(params)) {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    for (std::size_t j = i + 1; j < blocks_.size(); ++j)
      if (blocks_[i].name == blocks_[j].name) throw ConfigError("duplicate block name '" + blocks_[i].name + "'");
  for (const auto& b : blocks_)
    for (const auto& l : b.layers)
      if ((l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) &&
          (l.weight >= params_.size() || l.bias >= params_.size()))
        throw ConfigError("layer in block '" + b.name + "' references a missing parameter");
}

ad::Var Model::forward(ad::Tape& tape, ad::Var x, ParamMode mode) const {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != input_shape().size() + 1 || !std::equal(input_shape().begin(), input_shape().end(), xv.shape().begin() + 1))
    throw ShapeError("model expects (batch, " + shape_string(input_shape()) + ") input, got " + shape_string(xv.shape()));
  for (std::size_t b = 0; b < blocks_.size(); ++b) x = forward_block(tape, x, b, mode);
  return x;
}

ad::Var Model::forward_block(ad::Tape& tape, ad::Var x, std::size_t block, ParamMode mode) const {
  const Block& blk = blocks_.at(block);
  auto leaf = [&](std::size_t idx) {
    const Parameter& p = params_[idx];
    return mode == ParamMode::track ? tape.parameter(p.id, p.value) : tape.constant(p.value);
  };
  for (std::size_t i = 0; i < blk.layers.size(); ++i) {
    const Layer& l = blk.layers[i];
    switch (l.kind) {
      case LayerKind::dense: x = ad::dense(tape, x, leaf(l.weight), leaf(l.bias)); break;
      case LayerKind::conv2d: x = ad::conv2d(tape, x, leaf(l.weight), leaf(l.bias), l.conv); break;
      case LayerKind::relu: x = ad::relu(tape, x); break;
      case LayerKind::max_pool2x2: x = ad::max_pool2x2(tape, x); break;
      case LayerKind::flatten: x = ad::flatten(tape, x); break;
    }
    if (!tape.value(x).all_finite()) {
      const std::string where = blk.name + "/" + std::to_string(i) + ":" + std::string(layer_name(l.kind));
      throw NumericError("numeric overflow: non-finite activation after " + where, where);
    }
  }
  return x;
}

std::size_t Model::block_index(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return i;
  throw ConfigError("model has no block named '" + std::string(name) + "'");
}

const Tensor& Model::parameter(std::string_view id) const {
  for (const auto& p : params_)
    if (p.id == id) return p.value;
  throw ContractError("no parameter '" + std::string(id) + "'");
}

void Model::set_parameter(std::string_view id, Tensor value) {
  for (auto& p : params_)
    if (p.id == id) {
      if (p.value.shape() != value.shape())
        throw ShapeError("parameter '" + p.id + "' has shape " + shape_string(p.value.shape()) + ", got " +
                         shape_string(value.shape()));
      p.value = std::move(value);
      return;
    }
  throw ContractError("no parameter '" + std::string(id) + "'");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

namespace {

class Builder {
 public:
  explicit Builder(std::uint64_t seed) : rng_(seed) {}

  std::size_t param(std::string id, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<float> v(shape_size(shape));
    for (auto& x : v) {
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      x = static_cast<float>((2.0 * u - 1.0) * bound);
    }
    params.push_back({std::move(id), Tensor(std::move(shape), std::move(v))});
    return params.size() - 1;
  }

  Layer dense(const std::string& block, std::size_t in, std::size_t out) {
    Layer l{LayerKind::dense};
    l.weight = param(block + ".dense.weight", {in, out}, in);
    l.bias = param(block + ".dense.bias", {out}, in);
    return l;
  }

  Layer conv(const std::string& block, std::size_t in_ch, std::size_t out_ch) {
    Layer l{LayerKind::conv2d};
    const std::size_t fan_in = 9 * in_ch;
    l.weight = param(block + ".conv.weight", {3, 3, in_ch, out_ch}, fan_in);
    l.bias = param(block + ".conv.bias", {out_ch}, fan_in);
    return l;
  }

  std::vector<Parameter> params;

 private:
  std::mt19937_64 rng_;
};

}  // namespace

Model build_model(const ArchSpec& arch, std::uint64_t seed) {
  Builder b(seed);
  std::vector<Block> blocks;
  if (arch.name == "mlp") {
    if (arch.widths.empty()) throw ConfigError("mlp needs at least one width");
    if (shape_size(arch.input_shape) != arch.widths.front())
      throw ConfigError("mlp input shape " + shape_string(arch.input_shape) + " does not match width " +
                        std::to_string(arch.widths.front()));
    for (std::size_t i = 0; i + 1 < arch.widths.size(); ++i) {
      Block blk{"block" + std::to_string(i + 1), {}};
      if (i == 0 && arch.input_shape.size() > 1) blk.layers.push_back({LayerKind::flatten});
      blk.layers.push_back(b.dense(blk.name, arch.widths[i], arch.widths[i + 1]));
      if (i + 2 < arch.widths.size()) blk.layers.push_back({LayerKind::relu});
      blocks.push_back(std::move(blk));
    }
  } else if (arch.name == "smallcnn") {
    if (arch.input_shape.size() != 3) throw ConfigError("smallcnn input shape must be {H, W, C}");
    if (arch.channels.empty() || arch.num_classes == 0) throw ConfigError("smallcnn needs channels and classes");
    std::size_t h = arch.input_shape[0], w = arch.input_shape[1], c = arch.input_shape[2];
    for (std::size_t i = 0; i < arch.channels.size(); ++i) {
      if (h < 4 || w < 4) throw ConfigError("smallcnn input too small for " + std::to_string(arch.channels.size()) + " conv blocks");
      Block blk{"block" + std::to_string(i + 1), {}};
      blk.layers.push_back(b.conv(blk.name, c, arch.channels[i]));
      blk.layers.push_back({LayerKind::relu});
      blk.layers.push_back({LayerKind::max_pool2x2});
      h = (h - 2) / 2;
      w = (w - 2) / 2;
      c = arch.channels[i];
      blocks.push_back(std::move(blk));
    }
    Block head{"block" + std::to_string(arch.channels.size() + 1), {}};
    head.layers.push_back({LayerKind::flatten});
    head.layers.push_back(b.dense(head.name, h * w * c, arch.num_classes));
    blocks.push_back(std::move(head));
  } else {
    throw ConfigError("unknown architecture '" + arch.name + "' (expected mlp or smallcnn)");
  }
  return Model(arch, std::move(blocks), std::move(b.params));
}

ForwardPass forward_eval(const Classifier& model, const Tensor& input, ParamMode mode) {
  const Shape& expect = model.input_shape();
  if (input.rank() != expect.size() + 1 || !std::equal(expect.begin(), expect.end(), input.shape().begin() + 1))
    throw ShapeError("input shape " + shape_string(input.shape()) + " does not match model input (batch, " +
                     shape_string(expect) + ")");
  ForwardPass pass;
  pass.input = pass.tape.input(input);
  pass.logits = model.forward(pass.tape, pass.input, mode);
  return pass;
}

const Tensor& GradientBundle::parameter(std::string_view id) const {
  for (const auto& [name, g] : parameters)
    if (name == id) return g;
  throw ContractError("no gradient for parameter '" + std::string(id) + "'");
}

GradientBundle backward(const ForwardPass& pass, ad::Var loss) {
  const ad::Gradients g = pass.tape.backward(loss);
  return GradientBundle{g.parameters(), g[pass.input]};
}

ad::Var classification_loss(ad::Tape& tape, ad::Var logits, std::span<const int> labels, LossKind kind,
                            ad::Reduction reduction) {
  if (kind == LossKind::cross_entropy) return ad::softmax_cross_entropy(tape, logits, labels, reduction);
  ad::Var s = ad::scale(tape, ad::sum(tape, ad::pick(tape, logits, labels)), -1.0f);
  if (reduction == ad::Reduction::mean) s = ad::scale(tape, s, 1.0f / static_cast<float>(labels.size()));
  return s;
}

Tensor grad_wrt_input(const Classifier& model, const Tensor& x, std::span<const int> labels, LossKind kind) {
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes())
      throw ContractError("label " + std::to_string(y) + " out of range for " + std::to_string(model.num_classes()) +
                          " classes");
  ForwardPass pass = forward_eval(model, x, ParamMode::constant);
  const ad::Var loss = classification_loss(pass.tape, pass.logits, labels, kind, ad::Reduction::sum);
  return pass.tape.backward(loss)[pass.input];
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax expects (batch, classes) logits");
  std::vector<int> out(logits.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const Classifier& model, const Tensor& x) {
  ForwardPass pass = forward_eval(model, x, ParamMode::constant);
  return argmax_rows(pass.logits_value());
}

Tensor as_model_input(const Classifier& model, const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("expected a batched input");
  const Shape& s = model.input_shape();
  if (x.row_size() != shape_size(s))
    throw ShapeError("sample of " + std::to_string(x.row_size()) + " values does not fit model input " + shape_string(s));
  Shape full{x.dim(0)};
  full.insert(full.end(), s.begin(), s.end());
  return x.shape() == full ? x : x.reshaped(std::move(full));
}

}  // namespace gc::nn
