#include "pmdiff/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pmdiff {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

std::shared_ptr<TensorStorage> make_storage(Shape shape, double fill = 0.0) {
    auto s = std::make_shared<TensorStorage>();
    s->data.assign(shape_numel(shape), fill);
    s->shape = std::move(shape);
    return s;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> st(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
    return st;
}

// Unfolds one image [C,H,W] into columns [C*kh*kw, OH*OW].
void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* col) {
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                double* row = col + ((ci * kh + ky) * kw + kx) * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    double* dst = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        std::fill(dst, dst + ow, 0.0);
                        continue;
                    }
                    const double* src = x + (ci * h + static_cast<std::size_t>(iy)) * w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const double* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* x) {
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const double* row = col + ((ci * kh + ky) * kw + kx) * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    double* dst = x + (ci * h + static_cast<std::size_t>(iy)) * w;
                    const double* src = row + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto s = make_storage(std::move(shape), value);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape_numel(shape))
        throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    auto s = std::make_shared<TensorStorage>();
    s->shape = std::move(shape);
    s->data = std::move(values);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
}

Tensor Tensor::clone(bool requires_grad) const {
    auto s = std::make_shared<TensorStorage>();
    s->shape = s_->shape;
    s->data = s_->data;
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

// ---------------------------------------------------------------------------
// Graph plumbing

Graph::Scope::Scope(Graph& g, const std::string& label) : g_(g), prev_len_(g.label_.size()) {
    if (!g_.label_.empty()) g_.label_ += '/';
    g_.label_ += label;
}

Graph::Scope::~Scope() { g_.label_.resize(prev_len_); }

std::string Graph::node_name(const std::string& op) const { return label_.empty() ? op : label_ + "/" + op; }

void Graph::shape_fail(const std::string& op, const std::string& detail) const {
    throw ShapeError("shape mismatch in node '" + node_name(op) + "': " + detail);
}

Tensor Graph::finish(const std::string& op, std::vector<Tensor> inputs, std::shared_ptr<TensorStorage> out,
                     BackwardFn backward) {
    if (check_finite_) {
        for (double v : out->data) {
            if (!std::isfinite(v)) throw NonFiniteError("non-finite output in node '" + node_name(op) + "'");
        }
    }
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    out->requires_grad = needs;
    if (needs) {
        Node n;
        n.name = node_name(op);
        for (auto& t : inputs) n.inputs.push_back(t.storage());
        n.output = out;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
    }
    return Tensor(std::move(out));
}

Tensor Graph::custom(const std::string& op, std::vector<Tensor> inputs, Tensor value, BackwardFn backward) {
    auto out = make_storage(value.shape());
    out->data.assign(value.data().begin(), value.data().end());
    return finish(op, std::move(inputs), std::move(out), std::move(backward));
}

void Graph::backward(const Tensor& loss) {
    if (nodes_.empty()) throw TapeError("backward: no tape recorded (no input requires grad)");
    if (loss.numel() != 1) throw TapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    auto root = loss.storage();
    if (!root->requires_grad) throw TapeError("backward: loss is not connected to any requires-grad input");
    for (auto& n : nodes_) n.output->ensure_grad();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        for (auto& in : it->inputs) {
            if (in->requires_grad) in->ensure_grad();
        }
        it->backward(it->inputs, *it->output);
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        shape_fail("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_storage({m, n});
    if (m && n && k)
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                    static_cast<int>(k), 1.0, a.data().data(), static_cast<int>(k), b.data().data(),
                    static_cast<int>(n), 0.0, out->data.data(), static_cast<int>(n));
    return finish("matmul", {a, b}, out, [m, k, n](const auto& in, const TensorStorage& o) {
        auto& A = *in[0];
        auto& B = *in[1];
        if (A.requires_grad)  // dA = dO * B^T
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m), static_cast<int>(k),
                        static_cast<int>(n), 1.0, o.grad.data(), static_cast<int>(n), B.data.data(),
                        static_cast<int>(n), 1.0, A.grad.data(), static_cast<int>(k));
        if (B.requires_grad)  // dB = A^T * dO
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(k), static_cast<int>(n),
                        static_cast<int>(m), 1.0, A.data.data(), static_cast<int>(k), o.grad.data(),
                        static_cast<int>(n), 1.0, B.grad.data(), static_cast<int>(n));
    });
}

Tensor Graph::bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        shape_fail("bmm", shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t batch = a.dim(0);
    const std::size_t m = trans_a ? a.dim(2) : a.dim(1);
    const std::size_t k = trans_a ? a.dim(1) : a.dim(2);
    const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
    const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
    if (k != kb)
        shape_fail("bmm", shape_str(a.shape()) + (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                              (trans_b ? "^T" : ""));
    auto out = make_storage({batch, m, n});
    const int lda = static_cast<int>(a.dim(2)), ldb = static_cast<int>(b.dim(2)), ldo = static_cast<int>(n);
    const auto ta = trans_a ? CblasTrans : CblasNoTrans;
    const auto tb = trans_b ? CblasTrans : CblasNoTrans;
    const std::size_t sa = a.dim(1) * a.dim(2), sb = b.dim(1) * b.dim(2), so = m * n;
    for (std::size_t i = 0; i < batch && m && n && k; ++i)
        cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0,
                    a.data().data() + i * sa, lda, b.data().data() + i * sb, ldb, 0.0, out->data.data() + i * so,
                    ldo);
    return finish("bmm", {a, b}, out,
                  [=](const auto& in, const TensorStorage& o) {
                      auto& A = *in[0];
                      auto& B = *in[1];
                      for (std::size_t i = 0; i < batch; ++i) {
                          const double* dO = o.grad.data() + i * so;
                          if (A.requires_grad) {
                              // op(A) = dO * op(B)^T ; A stored as op^-1
                              double* dA = A.grad.data() + i * sa;
                              const double* Bp = B.data.data() + i * sb;
                              if (!trans_a)
                                  cblas_dgemm(CblasRowMajor, CblasNoTrans, trans_b ? CblasNoTrans : CblasTrans,
                                              static_cast<int>(m), static_cast<int>(k), static_cast<int>(n), 1.0,
                                              dO, ldo, Bp, ldb, 1.0, dA, lda);
                              else  // A is [K,M]: dA = op(B) * dO^T
                                  cblas_dgemm(CblasRowMajor, trans_b ? CblasTrans : CblasNoTrans, CblasTrans,
                                              static_cast<int>(k), static_cast<int>(m), static_cast<int>(n), 1.0,
                                              Bp, ldb, dO, ldo, 1.0, dA, lda);
                          }
                          if (B.requires_grad) {
                              double* dB = B.grad.data() + i * sb;
                              const double* Ap = A.data.data() + i * sa;
                              if (!trans_b)  // dB [K,N] = op(A)^T * dO
                                  cblas_dgemm(CblasRowMajor, trans_a ? CblasNoTrans : CblasTrans, CblasNoTrans,
                                              static_cast<int>(k), static_cast<int>(n), static_cast<int>(m), 1.0,
                                              Ap, lda, dO, ldo, 1.0, dB, ldb);
                              else  // B is [N,K]: dB = dO^T * op(A)
                                  cblas_dgemm(CblasRowMajor, CblasTrans, trans_a ? CblasTrans : CblasNoTrans,
                                              static_cast<int>(n), static_cast<int>(k), static_cast<int>(m), 1.0,
                                              dO, ldo, Ap, lda, 1.0, dB, ldb);
                          }
                      }
                  });
}

Tensor Graph::conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
        shape_fail("conv2d", "input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0)))
        shape_fail("conv2d", "bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
    if (opt.stride == 0) shape_fail("conv2d", "stride 0");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t s = opt.stride, p = opt.padding;
    if (h + 2 * p < kh || wd + 2 * p < kw)
        shape_fail("conv2d", "kernel larger than padded input " + shape_str(x.shape()));
    const std::size_t oh = (h + 2 * p - kh) / s + 1, ow = (wd + 2 * p - kw) / s + 1;
    const std::size_t ckk = c * kh * kw, l = oh * ow;
    const bool pointwise = kh == 1 && kw == 1 && s == 1 && p == 0;

    auto out = make_storage({n, o, oh, ow});
    std::vector<double> col(pointwise ? 0 : ckk * l);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data().data() + i * c * h * wd;
        const double* src = xi;
        if (!pointwise) {
            im2col(xi, c, h, wd, kh, kw, s, p, oh, ow, col.data());
            src = col.data();
        }
        double* yi = out->data.data() + i * o * l;
        if (bias.defined()) {
            for (std::size_t oc = 0; oc < o; ++oc) std::fill(yi + oc * l, yi + (oc + 1) * l, bias[oc]);
        }
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(o), static_cast<int>(l),
                    static_cast<int>(ckk), 1.0, w.data().data(), static_cast<int>(ckk), src, static_cast<int>(l),
                    bias.defined() ? 1.0 : 0.0, yi, static_cast<int>(l));
    }
    std::vector<Tensor> inputs{x, w};
    const bool has_bias = bias.defined();
    if (has_bias) inputs.push_back(bias);
    return finish("conv2d", std::move(inputs), out, [=](const auto& in, const TensorStorage& y) {
        auto& X = *in[0];
        auto& W = *in[1];
        std::vector<double> col(pointwise ? 0 : ckk * l);
        std::vector<double> dcol(pointwise || !X.requires_grad ? 0 : ckk * l);
        for (std::size_t i = 0; i < n; ++i) {
            const double* dy = y.grad.data() + i * o * l;
            const double* xi = X.data.data() + i * c * h * wd;
            if (W.requires_grad) {
                const double* src = xi;
                if (!pointwise) {
                    im2col(xi, c, h, wd, kh, kw, s, p, oh, ow, col.data());
                    src = col.data();
                }
                cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(o), static_cast<int>(ckk),
                            static_cast<int>(l), 1.0, dy, static_cast<int>(l), src, static_cast<int>(l), 1.0,
                            W.grad.data(), static_cast<int>(ckk));
            }
            if (X.requires_grad) {
                double* dxi = X.grad.data() + i * c * h * wd;
                if (pointwise) {
                    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(ckk), static_cast<int>(l),
                                static_cast<int>(o), 1.0, W.data.data(), static_cast<int>(ckk), dy,
                                static_cast<int>(l), 1.0, dxi, static_cast<int>(l));
                } else {
                    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(ckk), static_cast<int>(l),
                                static_cast<int>(o), 1.0, W.data.data(), static_cast<int>(ckk), dy,
                                static_cast<int>(l), 0.0, dcol.data(), static_cast<int>(l));
                    col2im(dcol.data(), c, h, wd, kh, kw, s, p, oh, ow, dxi);
                }
            }
            if (has_bias && in[2]->requires_grad) {
                auto& B = *in[2];
                for (std::size_t oc = 0; oc < o; ++oc) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < l; ++j) acc += dy[oc * l + j];
                    B.grad[oc] += acc;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("add", shape_str(a.shape()) + " + " + shape_str(b.shape()));
    auto out = make_storage(a.shape());
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a[i] + b[i];
    return finish("add", {a, b}, out, [](const auto& in, const TensorStorage& o) {
        for (auto& t : in) {
            if (!t->requires_grad) continue;
            for (std::size_t i = 0; i < o.grad.size(); ++i) t->grad[i] += o.grad[i];
        }
    });
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("sub", shape_str(a.shape()) + " - " + shape_str(b.shape()));
    auto out = make_storage(a.shape());
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a[i] - b[i];
    return finish("sub", {a, b}, out, [](const auto& in, const TensorStorage& o) {
        if (in[0]->requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) in[0]->grad[i] += o.grad[i];
        if (in[1]->requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) in[1]->grad[i] -= o.grad[i];
    });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("mul", shape_str(a.shape()) + " * " + shape_str(b.shape()));
    auto out = make_storage(a.shape());
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a[i] * b[i];
    return finish("mul", {a, b}, out, [](const auto& in, const TensorStorage& o) {
        auto& A = *in[0];
        auto& B = *in[1];
        if (A.requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) A.grad[i] += o.grad[i] * B.data[i];
        if (B.requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) B.grad[i] += o.grad[i] * A.data[i];
    });
}

Tensor Graph::scale(const Tensor& a, double s) {
    auto out = make_storage(a.shape());
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a[i] * s;
    return finish("scale", {a}, out, [s](const auto& in, const TensorStorage& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) in[0]->grad[i] += o.grad[i] * s;
    });
}

Tensor Graph::add_broadcast(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank()) shape_fail("add_broadcast", shape_str(a.shape()) + " + " + shape_str(b.shape()));
    for (std::size_t d = 0; d < a.rank(); ++d) {
        if (b.dim(d) != a.dim(d) && b.dim(d) != 1)
            shape_fail("add_broadcast", shape_str(a.shape()) + " + " + shape_str(b.shape()));
    }
    const auto ast = strides_of(a.shape());
    const auto bst = strides_of(b.shape());
    const Shape as = a.shape(), bs = b.shape();
    // maps each flat index of a to the flat index of b
    auto bindex = std::make_shared<std::vector<std::size_t>>(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        std::size_t rem = i, bi = 0;
        for (std::size_t d = 0; d < as.size(); ++d) {
            const std::size_t coord = rem / ast[d];
            rem %= ast[d];
            if (bs[d] != 1) bi += coord * bst[d];
        }
        (*bindex)[i] = bi;
    }
    auto out = make_storage(a.shape());
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a[i] + b[(*bindex)[i]];
    return finish("add_broadcast", {a, b}, out, [bindex](const auto& in, const TensorStorage& o) {
        if (in[0]->requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) in[0]->grad[i] += o.grad[i];
        if (in[1]->requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) in[1]->grad[(*bindex)[i]] += o.grad[i];
    });
}

Tensor Graph::softmax(const Tensor& x) {
    if (x.rank() == 0 || x.shape().back() == 0) shape_fail("softmax", shape_str(x.shape()));
    const std::size_t len = x.shape().back(), rows = x.numel() / len;
    auto out = make_storage(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x.data().data() + r * len;
        double* yi = out->data.data() + r * len;
        const double mx = *std::max_element(xi, xi + len);
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) z += (yi[j] = std::exp(xi[j] - mx));
        for (std::size_t j = 0; j < len; ++j) yi[j] /= z;
    }
    return finish("softmax", {x}, out, [rows, len](const auto& in, const TensorStorage& o) {
        auto& X = *in[0];
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * len;
            const double* dy = o.grad.data() + r * len;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += dy[j] * y[j];
            double* dx = X.grad.data() + r * len;
            for (std::size_t j = 0; j < len; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

Tensor Graph::group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 2 || groups == 0 || x.dim(1) % groups != 0)
        shape_fail("group_norm", shape_str(x.shape()) + " with " + std::to_string(groups) + " groups");
    const std::size_t n = x.dim(0), c = x.dim(1), spatial = x.numel() / (n * c);
    if (gamma.numel() != c || beta.numel() != c)
        shape_fail("group_norm", "affine " + shape_str(gamma.shape()) + " for " + std::to_string(c) + " channels");
    const std::size_t cpg = c / groups, gsize = cpg * spatial;
    auto out = make_storage(x.shape());
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(n * groups);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = (i * c + g * cpg) * spatial;
            const double* xs = x.data().data() + base;
            double mu = 0.0;
            for (std::size_t j = 0; j < gsize; ++j) mu += xs[j];
            mu /= static_cast<double>(gsize);
            double var = 0.0;
            for (std::size_t j = 0; j < gsize; ++j) var += (xs[j] - mu) * (xs[j] - mu);
            var /= static_cast<double>(gsize);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[i * groups + g] = is;
            for (std::size_t cc = 0; cc < cpg; ++cc) {
                const std::size_t ch = g * cpg + cc;
                for (std::size_t j = 0; j < spatial; ++j) {
                    const std::size_t idx = base + cc * spatial + j;
                    const double xh = (x[idx] - mu) * is;
                    (*xhat)[idx] = xh;
                    out->data[idx] = xh * gamma[ch] + beta[ch];
                }
            }
        }
    }
    return finish("group_norm", {x, gamma, beta}, out, [=](const auto& in, const TensorStorage& o) {
        auto& X = *in[0];
        auto& G = *in[1];
        auto& B = *in[2];
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t g = 0; g < groups; ++g) {
                const std::size_t base = (i * c + g * cpg) * spatial;
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (std::size_t cc = 0; cc < cpg; ++cc) {
                    const std::size_t ch = g * cpg + cc;
                    for (std::size_t j = 0; j < spatial; ++j) {
                        const std::size_t idx = base + cc * spatial + j;
                        const double dy = o.grad[idx];
                        if (G.requires_grad) G.grad[ch] += dy * (*xhat)[idx];
                        if (B.requires_grad) B.grad[ch] += dy;
                        const double dxh = dy * G.data[ch];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * (*xhat)[idx];
                    }
                }
                if (!X.requires_grad) continue;
                const double is = (*inv_std)[i * groups + g];
                const double m = static_cast<double>(gsize);
                for (std::size_t cc = 0; cc < cpg; ++cc) {
                    const std::size_t ch = g * cpg + cc;
                    for (std::size_t j = 0; j < spatial; ++j) {
                        const std::size_t idx = base + cc * spatial + j;
                        const double dxh = o.grad[idx] * G.data[ch];
                        X.grad[idx] += is * (dxh - sum_dxh / m - (*xhat)[idx] * sum_dxh_xh / m);
                    }
                }
            }
        }
    });
}

Tensor Graph::silu(const Tensor& x) {
    auto out = make_storage(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out->data[i] = x[i] / (1.0 + std::exp(-x[i]));
    return finish("silu", {x}, out, [](const auto& in, const TensorStorage& o) {
        auto& X = *in[0];
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double sg = 1.0 / (1.0 + std::exp(-X.data[i]));
            X.grad[i] += o.grad[i] * sg * (1.0 + X.data[i] * (1.0 - sg));
        }
    });
}

// ---------------------------------------------------------------------------
// Layout

Tensor Graph::concat(const std::vector<Tensor>& xs, std::size_t axis) {
    if (xs.empty()) shape_fail("concat", "no inputs");
    const Shape& s0 = xs[0].shape();
    if (axis >= s0.size()) shape_fail("concat", "axis " + std::to_string(axis) + " for " + shape_str(s0));
    Shape os = s0;
    os[axis] = 0;
    for (const auto& t : xs) {
        if (t.rank() != s0.size()) shape_fail("concat", shape_str(t.shape()) + " vs " + shape_str(s0));
        for (std::size_t d = 0; d < s0.size(); ++d) {
            if (d != axis && t.dim(d) != s0[d]) shape_fail("concat", shape_str(t.shape()) + " vs " + shape_str(s0));
        }
        os[axis] += t.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
    std::vector<std::size_t> widths;
    for (const auto& t : xs) widths.push_back(t.dim(axis) * inner);
    const std::size_t total = os[axis] * inner;
    auto out = make_storage(os);
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            std::copy_n(xs[k].data().data() + o * widths[k], widths[k], out->data.data() + o * total + off);
            off += widths[k];
        }
    }
    return finish("concat", xs, out, [outer, widths, total](const auto& in, const TensorStorage& y) {
        for (std::size_t o = 0; o < outer; ++o) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < in.size(); ++k) {
                if (in[k]->requires_grad) {
                    const double* src = y.grad.data() + o * total + off;
                    double* dst = in[k]->grad.data() + o * widths[k];
                    for (std::size_t j = 0; j < widths[k]; ++j) dst[j] += src[j];
                }
                off += widths[k];
            }
        }
    });
}

Tensor Graph::reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
    auto out = make_storage(std::move(shape));
    out->data.assign(x.data().begin(), x.data().end());
    return finish("reshape", {x}, out, [](const auto& in, const TensorStorage& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) in[0]->grad[i] += o.grad[i];
    });
}

Tensor Graph::permute(const Tensor& x, const std::vector<std::size_t>& order) {
    const std::size_t r = x.rank();
    std::vector<bool> seen(r, false);
    bool ok = order.size() == r;
    for (std::size_t i = 0; ok && i < r; ++i) {
        ok = order[i] < r && !seen[order[i]];
        if (ok) seen[order[i]] = true;
    }
    if (!ok) shape_fail("permute", "bad axis order for " + shape_str(x.shape()));
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) os[i] = x.dim(order[i]);
    const auto ist = strides_of(x.shape());
    const auto ost = strides_of(os);
    auto src_index = std::make_shared<std::vector<std::size_t>>(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        std::size_t rem = i, si = 0;
        for (std::size_t d = 0; d < r; ++d) {
            const std::size_t coord = rem / ost[d];
            rem %= ost[d];
            si += coord * ist[order[d]];
        }
        (*src_index)[i] = si;
    }
    auto out = make_storage(os);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = x[(*src_index)[i]];
    return finish("permute", {x}, out, [src_index](const auto& in, const TensorStorage& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) in[0]->grad[(*src_index)[i]] += o.grad[i];
    });
}

Tensor Graph::upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 4) shape_fail("upsample_nearest2x", shape_str(x.shape()));
    const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    auto out = make_storage({x.dim(0), x.dim(1), 2 * h, 2 * w});
    for (std::size_t p = 0; p < nc; ++p) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out->data[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
        }
    }
    return finish("upsample_nearest2x", {x}, out, [nc, h, w](const auto& in, const TensorStorage& o) {
        auto& X = *in[0];
        for (std::size_t p = 0; p < nc; ++p) {
            for (std::size_t y = 0; y < 2 * h; ++y) {
                for (std::size_t xx = 0; xx < 2 * w; ++xx)
                    X.grad[(p * h + y / 2) * w + xx / 2] += o.grad[(p * 2 * h + y) * 2 * w + xx];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor Graph::mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("mse", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    auto out = make_storage({1});
    out->data[0] = acc * inv_n;
    return finish("mse", {a, b}, out, [inv_n](const auto& in, const TensorStorage& o) {
        auto& A = *in[0];
        auto& B = *in[1];
        const double g = 2.0 * inv_n * o.grad[0];
        for (std::size_t i = 0; i < A.data.size(); ++i) {
            const double d = g * (A.data[i] - B.data[i]);
            if (A.requires_grad) A.grad[i] += d;
            if (B.requires_grad) B.grad[i] -= d;
        }
    });
}

Tensor Graph::sum(const Tensor& x) {
    auto out = make_storage({1});
    out->data[0] = std::accumulate(x.data().begin(), x.data().end(), 0.0);
    return finish("sum", {x}, out, [](const auto& in, const TensorStorage& o) {
        for (auto& g : in[0]->grad) g += o.grad[0];
    });
}

Tensor Graph::mean(const Tensor& x) {
    const double inv_n = 1.0 / static_cast<double>(x.numel());
    auto out = make_storage({1});
    out->data[0] = std::accumulate(x.data().begin(), x.data().end(), 0.0) * inv_n;
    return finish("mean", {x}, out, [inv_n](const auto& in, const TensorStorage& o) {
        for (auto& g : in[0]->grad) g += o.grad[0] * inv_n;
    });
}

}  // namespace pmdiff
