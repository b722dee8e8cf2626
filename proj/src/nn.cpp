// SPDX-License-Identifier: Apache-2.0
#include "ciard/nn.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "ciard/errors.hpp"
#include "ciard/rng.hpp"

namespace ciard {

namespace {

enum class LayerKind { Linear, Conv, Relu, Pool, Flatten };

struct Layer {
  LayerKind kind;
  std::string name;
  std::size_t weight = 0;  // index into ParamSet (Linear/Conv); bias is weight + 1
  Shape in_shape;          // per-sample
  Shape out_shape;         // per-sample
};

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty() || s == "-") return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

std::vector<Layer> build_layers(const ModelSpec& spec) {
  std::vector<Layer> layers;
  std::size_t param = 0;
  Shape cur = spec.input_shape;
  if (spec.arch == Arch::SmallCnn) {
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
      const std::string n = "conv" + std::to_string(i);
      Shape out{spec.conv_channels[i], cur[1], cur[2]};
      layers.push_back({LayerKind::Conv, n, param, cur, out});
      param += 2;
      layers.push_back({LayerKind::Relu, n + ".relu", 0, out, out});
      Shape pooled{out[0], out[1] / 2, out[2] / 2};
      layers.push_back({LayerKind::Pool, n + ".pool", 0, out, pooled});
      cur = pooled;
    }
    Shape flat{shape_numel(cur)};
    layers.push_back({LayerKind::Flatten, "flatten", 0, cur, flat});
    cur = flat;
  }
  std::vector<std::size_t> widths = spec.hidden;
  widths.push_back(spec.num_classes);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string n = "fc" + std::to_string(i);
    Shape out{widths[i]};
    layers.push_back({LayerKind::Linear, n, param, cur, out});
    param += 2;
    if (i + 1 < widths.size()) layers.push_back({LayerKind::Relu, n + ".relu", 0, out, out});
    cur = out;
  }
  return layers;
}

Shape batched(std::size_t b, const Shape& s) {
  Shape out{b};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

void check_finite(const Tensor& t, const Layer& layer, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite ") + what + " at layer '" + layer.name + "'");
  }
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t batch) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  Tensor y(Shape{batch, out});
  const float* xp = x.data().data();
  const float* wp = w.data().data();
  float* yp = y.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const float* xr = xp + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const float* wr = wp + o * in;
      float acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yp[n * out + o] = acc;
    }
  }
  return y;
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t batch, const Shape& in_s) {
  const std::size_t cin = in_s[0], h = in_s[1], wd = in_s[2], cout = w.dim(0);
  Tensor y(Shape{batch, cout, h, wd});
  const float* xp = x.data().data();
  const float* wp = w.data().data();
  float* yp = y.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      float* yc = yp + (n * cout + co) * h * wd;
      for (std::size_t i = 0; i < h * wd; ++i) yc[i] = b[co];
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const float* xc = xp + (n * cin + ci) * h * wd;
        const float* k = wp + (co * cin + ci) * 9;
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < wd; ++c) {
            float acc = 0.0f;
            for (int kr = 0; kr < 3; ++kr) {
              const long rr = static_cast<long>(r) + kr - 1;
              if (rr < 0 || rr >= static_cast<long>(h)) continue;
              for (int kc = 0; kc < 3; ++kc) {
                const long cc = static_cast<long>(c) + kc - 1;
                if (cc < 0 || cc >= static_cast<long>(wd)) continue;
                acc += k[kr * 3 + kc] * xc[rr * static_cast<long>(wd) + cc];
              }
            }
            yc[r * wd + c] += acc;
          }
        }
      }
    }
  }
  return y;
}

Tensor pool_forward(const Tensor& x, std::size_t batch, const Shape& in_s, std::vector<std::uint32_t>& arg) {
  const std::size_t ch = in_s[0], h = in_s[1], w = in_s[2], oh = h / 2, ow = w / 2;
  Tensor y(Shape{batch, ch, oh, ow});
  arg.assign(y.numel(), 0);
  const float* xp = x.data().data();
  std::size_t o = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (n * ch + c) * h * w;
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t q = 0; q < ow; ++q, ++o) {
          std::size_t best = base + (2 * r) * w + 2 * q;
          for (std::size_t dr = 0; dr < 2; ++dr) {
            for (std::size_t dq = 0; dq < 2; ++dq) {
              const std::size_t idx = base + (2 * r + dr) * w + 2 * q + dq;
              if (xp[idx] > xp[best]) best = idx;
            }
          }
          y[o] = xp[best];
          arg[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelSpec

std::string arch_name(Arch arch) { return arch == Arch::Mlp ? "mlp" : "smallcnn"; }

Arch parse_arch(const std::string& name) {
  if (name == "mlp") return Arch::Mlp;
  if (name == "smallcnn" || name == "cnn") return Arch::SmallCnn;
  throw ParameterError("unknown architecture '" + name + "'");
}

ModelSpec ModelSpec::mlp(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes) {
  ModelSpec s;
  s.arch = Arch::Mlp;
  s.input_shape = {input_dim};
  s.hidden = std::move(hidden);
  s.num_classes = num_classes;
  s.validate();
  return s;
}

ModelSpec ModelSpec::small_cnn(Shape chw, std::vector<std::size_t> channels, std::vector<std::size_t> hidden,
                               std::size_t num_classes) {
  ModelSpec s;
  s.arch = Arch::SmallCnn;
  s.input_shape = std::move(chw);
  s.conv_channels = std::move(channels);
  s.hidden = std::move(hidden);
  s.num_classes = num_classes;
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw ParameterError("num_classes must be >= 2");
  for (auto h : hidden) {
    if (h == 0) throw ParameterError("hidden width must be positive");
  }
  if (arch == Arch::Mlp) {
    if (input_shape.size() != 1 || input_shape[0] == 0) throw ParameterError("MLP input shape must be [D], D > 0");
    if (!conv_channels.empty()) throw ParameterError("MLP spec must not list conv channels");
    return;
  }
  if (input_shape.size() != 3) throw ParameterError("SmallCNN input shape must be [C, H, W]");
  if (conv_channels.empty()) throw ParameterError("SmallCNN needs at least one conv block");
  std::size_t h = input_shape[1], w = input_shape[2];
  for (auto c : conv_channels) {
    if (c == 0) throw ParameterError("conv channel count must be positive");
    if (h < 2 || w < 2) throw ParameterError("input too small for the requested pooling depth");
    h /= 2;
    w /= 2;
  }
}

std::string ModelSpec::to_string() const {
  std::string out = "arch=" + arch_name(arch) + " input=" + shape_to_string(input_shape);
  if (arch == Arch::SmallCnn) out += " conv=" + (conv_channels.empty() ? std::string("-") : join_sizes(conv_channels));
  out += " hidden=" + (hidden.empty() ? std::string("-") : join_sizes(hidden));
  out += " classes=" + std::to_string(num_classes);
  return out;
}

ModelSpec ModelSpec::from_string(const std::string& text) {
  ModelSpec s;
  std::stringstream ss(text);
  std::string tok;
  bool have_arch = false, have_input = false, have_classes = false;
  try {
    while (ss >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("bad spec token '" + tok + "'");
      const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "arch") {
        s.arch = parse_arch(val);
        have_arch = true;
      } else if (key == "input") {
        std::string v = val;
        for (auto& ch : v) {
          if (ch == 'x') ch = ',';
        }
        s.input_shape = parse_sizes(v);
        have_input = true;
      } else if (key == "conv") {
        s.conv_channels = parse_sizes(val);
      } else if (key == "hidden") {
        s.hidden = parse_sizes(val);
      } else if (key == "classes") {
        s.num_classes = std::stoul(val);
        have_classes = true;
      } else {
        throw FormatError("unknown spec key '" + key + "'");
      }
    }
  } catch (const std::logic_error&) {
    throw FormatError("malformed model spec '" + text + "'");
  }
  if (!have_arch || !have_input || !have_classes) throw FormatError("incomplete model spec '" + text + "'");
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// ParamSet

void ParamSet::add(std::string name, Tensor value) {
  if (find(name)) throw ParameterError("duplicate parameter name '" + name + "'");
  items_.push_back({std::move(name), std::move(value)});
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.numel();
  return n;
}

const Tensor* ParamSet::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p.value;
  }
  return nullptr;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& p : items_) out.items_.push_back({p.name, Tensor(p.value.shape())});
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (items_.size() != other.items_.size()) return false;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].name != other.items_[i].name || items_[i].value.shape() != other.items_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

ParamSet& ParamSet::operator+=(const ParamSet& other) {
  if (!same_layout(other)) throw ShapeError("parameter layout mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i) items_[i].value += other.items_[i].value;
  return *this;
}

std::vector<std::pair<std::string, Shape>> param_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& l : build_layers(spec)) {
    if (l.kind == LayerKind::Linear) {
      out.emplace_back(l.name + ".weight", Shape{l.out_shape[0], l.in_shape[0]});
      out.emplace_back(l.name + ".bias", Shape{l.out_shape[0]});
    } else if (l.kind == LayerKind::Conv) {
      out.emplace_back(l.name + ".weight", Shape{l.out_shape[0], l.in_shape[0], 3, 3});
      out.emplace_back(l.name + ".bias", Shape{l.out_shape[0]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelSpec spec, ParamSet params) : spec_(std::move(spec)), params_(std::move(params)) {
  const auto layout = param_layout(spec_);
  if (layout.size() != params_.size()) {
    throw ShapeError("parameter count " + std::to_string(params_.size()) + " does not match spec (" +
                     std::to_string(layout.size()) + ")");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != params_[i].name || layout[i].second != params_[i].value.shape()) {
      throw ShapeError("parameter '" + params_[i].name + "' " + shape_to_string(params_[i].value.shape()) +
                       " does not match spec entry '" + layout[i].first + "' " + shape_to_string(layout[i].second));
    }
  }
}

Model Model::init(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet params;
  for (auto& [name, shape] : param_layout(spec)) {
    Tensor t(shape);
    if (shape.size() > 1) {
      const std::size_t fan_in = t.numel() / shape[0];
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.data()) v = static_cast<float>(rng.normal() * std);
    }
    params.add(name, std::move(t));
  }
  Model m(spec, std::move(params));
  m.set_seed(seed);
  return m;
}

Model Model::zeros(const ModelSpec& spec) {
  ParamSet params;
  for (auto& [name, shape] : param_layout(spec)) params.add(name, Tensor(shape));
  return Model(spec, std::move(params));
}

ParamSet& Model::mutable_params() {
  if (frozen_) throw FrozenModelError("attempt to modify a frozen model");
  return params_;
}

// ---------------------------------------------------------------------------
// forward / backward

ForwardTape forward_with_tape(const Model& model, const Tensor& x) {
  const ModelSpec& spec = model.spec();
  const Shape& in = spec.input_shape;
  if (x.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), x.shape().begin() + 1)) {
    throw ShapeError("input shape " + shape_to_string(x.shape()) + " does not match model input [B]x" +
                     shape_to_string(in));
  }
  const std::size_t batch = x.dim(0);
  const auto layers = build_layers(spec);
  const ParamSet& p = model.params();

  ForwardTape tape;
  tape.input = x;
  tape.pre.reserve(layers.size());
  Tensor cur = x;
  for (const auto& l : layers) {
    tape.pre.push_back(cur);
    switch (l.kind) {
      case LayerKind::Linear:
        cur = linear_forward(cur, p[l.weight].value, p[l.weight + 1].value, batch);
        break;
      case LayerKind::Conv:
        cur = conv_forward(cur, p[l.weight].value, p[l.weight + 1].value, batch, l.in_shape);
        break;
      case LayerKind::Relu:
        for (auto& v : cur.data()) v = v > 0.0f ? v : 0.0f;
        break;
      case LayerKind::Pool: {
        tape.pool_argmax.emplace_back();
        cur = pool_forward(cur, batch, l.in_shape, tape.pool_argmax.back());
        break;
      }
      case LayerKind::Flatten:
        cur = cur.reshaped(batched(batch, l.out_shape));
        break;
    }
    check_finite(cur, l, "activation");
  }
  tape.logits = std::move(cur);
  return tape;
}

Tensor forward(const Model& model, const Tensor& x) { return forward_with_tape(model, x).logits; }

Backprop backward(const Model& model, const ForwardTape& tape, const Tensor& dlogits) {
  if (dlogits.shape() != tape.logits.shape()) {
    throw ShapeError("dlogits shape " + shape_to_string(dlogits.shape()) + " does not match logits " +
                     shape_to_string(tape.logits.shape()));
  }
  const auto layers = build_layers(model.spec());
  const ParamSet& p = model.params();
  const std::size_t batch = tape.input.dim(0);

  Backprop out;
  out.param_grads = p.zeros_like();
  Tensor grad = dlogits;
  std::size_t pool_idx = tape.pool_argmax.size();

  for (std::size_t li = layers.size(); li-- > 0;) {
    const Layer& l = layers[li];
    const Tensor& in = tape.pre[li];
    switch (l.kind) {
      case LayerKind::Linear: {
        const Tensor& w = p[l.weight].value;
        const std::size_t no = w.dim(0), ni = w.dim(1);
        Tensor& gw = out.param_grads[l.weight].value;
        Tensor& gb = out.param_grads[l.weight + 1].value;
        Tensor gx(in.shape());
        for (std::size_t n = 0; n < batch; ++n) {
          const float* xr = in.data().data() + n * ni;
          const float* gr = grad.data().data() + n * no;
          float* gxr = gx.data().data() + n * ni;
          for (std::size_t o = 0; o < no; ++o) {
            const float g = gr[o];
            gb[o] += g;
            if (g == 0.0f) continue;
            float* gwr = gw.data().data() + o * ni;
            const float* wr = w.data().data() + o * ni;
            for (std::size_t i = 0; i < ni; ++i) {
              gwr[i] += g * xr[i];
              gxr[i] += g * wr[i];
            }
          }
        }
        grad = std::move(gx);
        break;
      }
      case LayerKind::Conv: {
        const Tensor& w = p[l.weight].value;
        const std::size_t cin = l.in_shape[0], h = l.in_shape[1], wd = l.in_shape[2], cout = w.dim(0);
        Tensor& gw = out.param_grads[l.weight].value;
        Tensor& gb = out.param_grads[l.weight + 1].value;
        Tensor gx(in.shape());
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t co = 0; co < cout; ++co) {
            const float* gy = grad.data().data() + (n * cout + co) * h * wd;
            for (std::size_t i = 0; i < h * wd; ++i) gb[co] += gy[i];
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const float* xc = in.data().data() + (n * cin + ci) * h * wd;
              float* gxc = gx.data().data() + (n * cin + ci) * h * wd;
              const float* k = w.data().data() + (co * cin + ci) * 9;
              float* gk = gw.data().data() + (co * cin + ci) * 9;
              for (std::size_t r = 0; r < h; ++r) {
                for (std::size_t c = 0; c < wd; ++c) {
                  const float g = gy[r * wd + c];
                  if (g == 0.0f) continue;
                  for (int kr = 0; kr < 3; ++kr) {
                    const long rr = static_cast<long>(r) + kr - 1;
                    if (rr < 0 || rr >= static_cast<long>(h)) continue;
                    for (int kc = 0; kc < 3; ++kc) {
                      const long cc = static_cast<long>(c) + kc - 1;
                      if (cc < 0 || cc >= static_cast<long>(wd)) continue;
                      const long idx = rr * static_cast<long>(wd) + cc;
                      gk[kr * 3 + kc] += g * xc[idx];
                      gxc[idx] += g * k[kr * 3 + kc];
                    }
                  }
                }
              }
            }
          }
        }
        grad = std::move(gx);
        break;
      }
      case LayerKind::Relu: {
        for (std::size_t i = 0; i < grad.numel(); ++i) {
          if (!(in[i] > 0.0f)) grad[i] = 0.0f;
        }
        break;
      }
      case LayerKind::Pool: {
        const auto& arg = tape.pool_argmax[--pool_idx];
        Tensor gx(in.shape());
        for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += grad[i];
        grad = std::move(gx);
        break;
      }
      case LayerKind::Flatten:
        grad = grad.reshaped(in.shape());
        break;
    }
    check_finite(grad, l, "gradient");
  }
  out.input_grad = std::move(grad);
  return out;
}

Gradients gradients(const Model& model, const Tensor& x, const Objective& objective) {
  ForwardTape tape = forward_with_tape(model, x);
  ObjectiveValue obj = objective(tape.logits);
  if (!std::isfinite(obj.value)) throw NumericError("non-finite objective value");
  Backprop bp = backward(model, tape, obj.dlogits);
  return {obj.value, std::move(bp.param_grads), std::move(bp.input_grad)};
}

std::uint64_t param_digest(const Model& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : model.params()) {
    feed(p.name.data(), p.name.size());
    for (auto d : p.value.shape()) feed(&d, sizeof d);
    feed(p.value.data().data(), p.value.numel() * sizeof(float));
  }
  return h;
}

}  // namespace ciard
