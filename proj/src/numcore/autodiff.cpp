#include "vfr/numcore/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "vfr/errors.hpp"

namespace vfr {

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.parameter = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw ShapeMismatch("operands belong to different graphs");
    n.requires_grad = n.requires_grad || v.requires_grad();
  }
  if (n.requires_grad) {
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) n.inputs.push_back(v.id());
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Gradients::operator[](Var parameter) const {
  if (auto it = grads_.find(parameter.id()); it != grads_.end()) return it->second;
  auto [it, inserted] = zeros_.try_emplace(
      parameter.id(), Tensor::zeros_like(parameter.value()));
  return it->second;
}

Tensor Gradients::take(Var parameter) {
  if (auto it = grads_.find(parameter.id()); it != grads_.end()) {
    Tensor t = std::move(it->second);
    grads_.erase(it);
    return t;
  }
  return Tensor::zeros_like(parameter.value());
}

Gradients backward(Graph& graph, Var loss) {
  if (&loss.graph() != &graph) throw NotScalarLoss("loss is not a node of this graph");
  if (loss.size() != 1) {
    throw NotScalarLoss("loss must be scalar, got " + shape_str(loss.shape()));
  }
  Gradients result;
  result.graph_ = &graph;
  if (!loss.requires_grad()) return result;

  const std::size_t n = loss.id() + 1;
  std::vector<Tensor> grads(n);
  std::vector<bool> has(n, false);
  grads[loss.id()] = Tensor(loss.shape(), 1.0);
  has[loss.id()] = true;

  std::vector<Tensor*> slots;
  for (std::size_t k = n; k-- > 0;) {
    if (!has[k]) continue;
    auto& node = graph.nodes_[k];
    if (node.parameter) {
      result.grads_.emplace(static_cast<std::uint32_t>(k), std::move(grads[k]));
      continue;
    }
    if (!node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const auto in = node.inputs[i];
      if (!graph.nodes_[in].requires_grad) continue;
      if (!has[in]) {
        grads[in] = Tensor::zeros_like(graph.nodes_[in].value);
        has[in] = true;
      }
      slots[i] = &grads[in];
    }
    node.backward(grads[k], slots);
    grads[k] = Tensor();
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

Graph& graph_of(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw ShapeMismatch("operands belong to different graphs");
  return a.graph();
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out = a;
  for (auto& v : out.values()) v = f(v);
  return out;
}

}  // namespace

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return graph_of(a, b).record(std::move(out), {a, b}, [](const Tensor& g, auto in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out -= b.value();
  return graph_of(a, b).record(std::move(out), {a, b}, [](const Tensor& g, auto in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] -= g;
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return graph_of(a, b).record(std::move(out), {a, b}, [a, b](const Tensor& g, auto in) {
    if (in[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * b.value()[i];
    }
    if (in[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out *= s;
  return a.graph().record(std::move(out), {a}, [s](const Tensor& g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += s * g[i];
  });
}

Var neg(Var a) { return scale(a, -1.0); }
Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }

Var matmul(Var a, Var b) {
  Tensor out = matmul_values(a.value(), b.value());
  return graph_of(a, b).record(std::move(out), {a, b}, [a, b](const Tensor& g, auto in) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (in[0]) {
      // dA = G . B^T
      double* da = in[0]->data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          da[i * k + p] += s;
        }
      }
    }
    if (in[1]) {
      // dB = A^T . G
      double* db = in[1]->data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& v = a.value();
  if (v.rank() != 2) throw ShapeMismatch("transpose needs a matrix, got " + shape_str(v.shape()));
  const std::size_t r = v.dim(0), c = v.dim(1);
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return a.graph().record(std::move(out), {a}, [r, c](const Tensor& g, auto in) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*in[0])[i * c + j] += g[j * r + i];
  });
}

Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (av.rank() != 2 || bv.size() != av.dim(1)) {
    throw ShapeMismatch("add_bias " + shape_str(av.shape()) + " + " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return graph_of(a, bias).record(std::move(out), {a, bias}, [m, n](const Tensor& g, auto in) {
    if (in[0]) *in[0] += g;
    if (in[1]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*in[1])[j] += g[i * n + j];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph().record(std::move(out), {a}, [](const Tensor& g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
  });
}

Var sigmoid(Var a) {
  Tensor out = map_values(a.value(), sigmoid_value);
  return a.graph().record(std::move(out), {a}, [a](const Tensor& g, auto in) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = sigmoid_value(x[i]);
      (*in[0])[i] += g[i] * y * (1.0 - y);
    }
  });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var leaky_relu(Var a, double slope) {
  Tensor out = map_values(a.value(), [slope](double x) { return x > 0 ? x : slope * x; });
  return a.graph().record(std::move(out), {a}, [a, slope](const Tensor& g, auto in) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += x[i] > 0 ? g[i] : slope * g[i];
  });
}

Var square(Var a) {
  Tensor out = map_values(a.value(), [](double x) { return x * x; });
  return a.graph().record(std::move(out), {a}, [a](const Tensor& g, auto in) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += 2.0 * x[i] * g[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.graph().record(Tensor::scalar(s), {a}, [](const Tensor& g, auto in) {
    const double gv = g[0];
    for (auto& v : in[0]->values()) v += gv;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var bce_loss(Var probs, const Tensor& labels) {
  const Tensor& p = probs.value();
  require_same_shape(p, labels, "bce_loss");
  constexpr double kClamp = 1e-12;
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double r = labels[i];
    if (r != 0.0 && r != 1.0) {
      throw NonBinaryLabel("label " + std::to_string(r) + " at index " + std::to_string(i));
    }
    const double q = std::clamp(p[i], kClamp, 1.0 - kClamp);
    loss -= r * std::log(q) + (1.0 - r) * std::log(1.0 - q);
  }
  return probs.graph().record(Tensor::scalar(loss), {probs},
                              [probs, labels](const Tensor& g, auto in) {
    const Tensor& p = probs.value();
    for (std::size_t i = 0; i < p.size(); ++i) {
      // Clamped region has zero derivative.
      if (p[i] < kClamp || p[i] > 1.0 - kClamp) continue;
      const double r = labels[i];
      (*in[0])[i] += g[0] * (-r / p[i] + (1.0 - r) / (1.0 - p[i]));
    }
  });
}

Var mse_loss(Var a, Var b) { return mean(square(sub(a, b))); }

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeMismatch("concat of no parts");
  const Shape& first = parts.front().shape();
  const std::size_t rank = first.size();
  if (axis >= rank || rank > 2) throw ShapeMismatch("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != rank) throw ShapeMismatch("concat rank mismatch");
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeMismatch("concat " + shape_str(first) + " with " + shape_str(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  Tensor out(out_shape);
  // Views as [outer x width] blocks; axis 0 concat stacks whole blocks.
  const std::size_t rows = (rank == 2 && axis == 1) ? first[0] : 1;
  const std::size_t out_w = out.size() / rows;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.size() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.value().data() + r * w, w, out.data() + r * out_w + off);
    }
    off += w;
  }
  Graph& graph = parts.front().graph();
  return graph.record(std::move(out), parts,
                      [rows, out_w, offsets](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (!in[k]) continue;
      const std::size_t w = in[k]->size() / rows;
      for (std::size_t r = 0; r < rows; ++r) {
        double* dst = in[k]->data() + r * w;
        const double* src = g.data() + r * out_w + offsets[k];
        for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
      }
    }
  });
}

Var gather_rows(Var table, const std::vector<std::size_t>& index) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw ShapeMismatch("gather_rows needs a matrix");
  const std::size_t d = t.dim(1);
  Tensor out(Shape{index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= t.dim(0)) throw ShapeMismatch("gather_rows index out of range");
    std::copy_n(t.data() + index[i] * d, d, out.data() + i * d);
  }
  return table.graph().record(std::move(out), {table}, [index, d](const Tensor& g, auto in) {
    for (std::size_t i = 0; i < index.size(); ++i) {
      double* dst = in[0]->data() + index[i] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
    }
  });
}

Var broadcast_rows(Var v, std::size_t n) {
  const Tensor& t = v.value();
  if (t.rank() != 1) throw ShapeMismatch("broadcast_rows needs a vector");
  const std::size_t d = t.size();
  Tensor out(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(t.data(), d, out.data() + i * d);
  return v.graph().record(std::move(out), {v}, [n, d](const Tensor& g, auto in) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) (*in[0])[j] += g[i * d + j];
  });
}

Var sum_rows(Var m) {
  const Tensor& t = m.value();
  if (t.rank() != 2) throw ShapeMismatch("sum_rows needs a matrix");
  const std::size_t n = t.dim(0), d = t.dim(1);
  Tensor out(Shape{d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += t[i * d + j];
  return m.graph().record(std::move(out), {m}, [n, d](const Tensor& g, auto in) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) (*in[0])[i * d + j] += g[j];
  });
}

Var gather(Var v, const std::vector<std::size_t>& index) {
  const Tensor& t = v.value();
  Tensor out(Shape{index.size()});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= t.size()) throw ShapeMismatch("gather index out of range");
    out[i] = t[index[i]];
  }
  return v.graph().record(std::move(out), {v}, [index](const Tensor& g, auto in) {
    for (std::size_t i = 0; i < index.size(); ++i) (*in[0])[index[i]] += g[i];
  });
}

Var conv2d(Var x, Var weight, std::size_t stride, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3)) {
    throw ShapeMismatch("conv2d " + shape_str(xv.shape()) + " * " + shape_str(wv.shape()));
  }
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const std::size_t O = wv.dim(0), K = wv.dim(2);
  if (H + 2 * pad < K || W + 2 * pad < K) throw ShapeMismatch("conv2d kernel larger than input");
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - K) / stride + 1;
  Tensor out(Shape{O, Ho, Wo});
  const double* px = xv.data();
  const double* pw = wv.data();
  double* po = out.data();
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t ky = 0; ky < K; ++ky) {
        for (std::size_t kx = 0; kx < K; ++kx) {
          const double w = pw[((o * C + c) * K + ky) * K + kx];
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            const double* xrow = px + (c * H + static_cast<std::size_t>(iy)) * W;
            double* orow = po + (o * Ho + oy) * Wo;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              orow[ox] += w * xrow[ix];
            }
          }
        }
      }
    }
  }
  return graph_of(x, weight).record(
      std::move(out), {x, weight},
      [x, weight, C, H, W, O, K, Ho, Wo, stride, pad](const Tensor& g, auto in) {
        const double* px = x.value().data();
        const double* pw = weight.value().data();
        double* dx = in[0] ? in[0]->data() : nullptr;
        double* dw = in[1] ? in[1]->data() : nullptr;
        for (std::size_t o = 0; o < O; ++o) {
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ky = 0; ky < K; ++ky) {
              for (std::size_t kx = 0; kx < K; ++kx) {
                const std::size_t widx = ((o * C + c) * K + ky) * K + kx;
                const double w = pw[widx];
                double wacc = 0.0;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                            static_cast<std::ptrdiff_t>(pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                  const std::size_t xoff = (c * H + static_cast<std::size_t>(iy)) * W;
                  const double* grow = g.data() + (o * Ho + oy) * Wo;
                  for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                    if (dx) dx[xoff + static_cast<std::size_t>(ix)] += w * grow[ox];
                    wacc += px[xoff + static_cast<std::size_t>(ix)] * grow[ox];
                  }
                }
                if (dw) dw[widx] += wacc;
              }
            }
          }
        }
      });
}

Var add_channel_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 3 || bv.size() != xv.dim(0)) {
    throw ShapeMismatch("add_channel_bias " + shape_str(xv.shape()) + " + " +
                        shape_str(bv.shape()));
  }
  const std::size_t C = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor out = xv;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bv[c];
  return graph_of(x, bias).record(std::move(out), {x, bias}, [C, plane](const Tensor& g, auto in) {
    if (in[0]) *in[0] += g;
    if (in[1]) {
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += g[c * plane + i];
        (*in[1])[c] += s;
      }
    }
  });
}

Var avg_pool(Var x, std::size_t out_h, std::size_t out_w) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || out_h == 0 || out_w == 0 || xv.dim(1) % out_h || xv.dim(2) % out_w) {
    throw ShapeMismatch("avg_pool " + shape_str(xv.shape()) + " to " + std::to_string(out_h) +
                        "x" + std::to_string(out_w));
  }
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const std::size_t bh = H / out_h, bw = W / out_w;
  const double inv = 1.0 / static_cast<double>(bh * bw);
  Tensor out(Shape{C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        out[(c * out_h + y / bh) * out_w + xx / bw] += xv[(c * H + y) * W + xx] * inv;
  return x.graph().record(std::move(out), {x},
                          [C, H, W, bh, bw, out_h, out_w, inv](const Tensor& g, auto in) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          (*in[0])[(c * H + y) * W + xx] += g[(c * out_h + y / bh) * out_w + xx / bw] * inv;
  });
}

}  // namespace vfr
