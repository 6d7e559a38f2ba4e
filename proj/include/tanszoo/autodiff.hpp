#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "tanszoo/common.hpp"
#include "tanszoo/tensor.hpp"

namespace tanszoo {

inline constexpr double kNormEps = 1e-12;
inline constexpr double kAdamEps = 1e-8;

// Forward kernels. The tape reuses these for node values, so the taped and
// plain inference paths produce bit-identical results.
namespace ops {

inline Tensor linear_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t n = w.rows(), m = w.cols();
    if (b.size() != m || x.size() % n != 0 || (x.rank() == 2 && x.cols() != n) ||
        (x.rank() == 1 && x.size() != n)) {
        throw validation_error("linear: shape mismatch x" + x.shape_str() + " w" + w.shape_str() +
                               " b" + b.shape_str());
    }
    const std::size_t batch = x.size() / n;
    Tensor y = x.rank() == 2 ? Tensor({batch, m}) : Tensor({m});
    for (std::size_t r = 0; r < batch; ++r) {
        const double* xr = x.data() + r * n;
        double* yr = y.data() + r * m;
        for (std::size_t j = 0; j < m; ++j) yr[j] = b[j];
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = xr[i];
            const double* wi = w.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) yr[j] += xi * wi[j];
        }
    }
    return y;
}

// Row-wise x / (||x|| + eps). Zero rows pass through as zeros; the count of
// such rows is reported through `zero_rows` when given.
inline Tensor l2_normalize_fwd(const Tensor& x, std::size_t* zero_rows = nullptr) {
    const std::size_t d = x.rank() == 2 ? x.cols() : x.size();
    const std::size_t batch = x.size() / (d == 0 ? 1 : d);
    Tensor y(x.shape(), std::vector<double>(x.data(), x.data() + x.size()));
    for (std::size_t r = 0; r < batch; ++r) {
        double* row = y.data() + r * d;
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += row[j] * row[j];
        const double norm = std::sqrt(sq);
        if (norm == 0.0) {
            if (zero_rows) ++*zero_rows;
            continue;
        }
        const double inv = 1.0 / (norm + kNormEps);
        for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
    }
    return y;
}

inline Tensor mean_pool_fwd(const Tensor& x) {
    if (x.rank() != 2) throw validation_error("mean_pool: expected rank-2 input");
    const std::size_t n = x.rows(), d = x.cols();
    Tensor y({d});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) y[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) y[j] /= static_cast<double>(n);
    return y;
}

inline Tensor sigmoid_fwd(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return y;
}

inline Tensor relu_fwd(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

// Cosine of two vectors; a zero vector yields 0 and sets `zero_flag`.
inline double cosine_fwd(const Tensor& a, const Tensor& b, bool* zero_flag = nullptr) {
    if (a.shape() != b.shape() || a.rank() != 1) {
        throw validation_error("cosine: expected equal-shape vectors");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        if (zero_flag) *zero_flag = true;
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline Tensor concat_fwd(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1) throw validation_error("concat: expected vectors");
    Tensor y({a.size() + b.size()});
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) y[a.size() + i] = b[i];
    return y;
}

}  // namespace ops

// Wengert-list reverse-mode tape over the handful of op kinds the encoders,
// losses, and predictor need. Single-threaded by construction; nodes are
// replayed in reverse creation order on backward().
class Tape {
public:
    struct Ref {
        std::uint32_t idx = UINT32_MAX;
        bool valid() const { return idx != UINT32_MAX; }
    };

    struct Diagnostics {
        std::size_t zero_norm_rows = 0;
        std::size_t zero_cosine = 0;
    };

    Ref constant(Tensor t) { return push(std::move(t), nullptr, {}); }

    // Leaf bound to an external parameter; backward() accumulates into p.grad.
    Ref leaf(Parameter& p) {
        Ref r = push(p.value, nullptr, {});
        nodes_[r.idx].bound = &p;
        return r;
    }

    Ref linear(Ref x, Ref w, Ref b) {
        Tensor y = ops::linear_fwd(value(x), value(w), value(b));
        return push(std::move(y), [x, w, b](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            const Tensor& xv = t.value(x);
            const Tensor& wv = t.value(w);
            const std::size_t n = wv.rows(), m = wv.cols();
            const std::size_t batch = xv.size() / n;
            Tensor& gx = t.nodes_[x.idx].grad;
            Tensor& gw = t.nodes_[w.idx].grad;
            Tensor& gb = t.nodes_[b.idx].grad;
            for (std::size_t r = 0; r < batch; ++r) {
                const double* gyr = gy.data() + r * m;
                const double* xr = xv.data() + r * n;
                double* gxr = gx.data() + r * n;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* wi = wv.data() + i * m;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < m; ++j) acc += gyr[j] * wi[j];
                    gxr[i] += acc;
                    double* gwi = gw.data() + i * m;
                    const double xi = xr[i];
                    for (std::size_t j = 0; j < m; ++j) gwi[j] += xi * gyr[j];
                }
                for (std::size_t j = 0; j < m; ++j) gb[j] += gyr[j];
            }
        }, {x, w, b});
    }

    Ref l2_normalize(Ref x) {
        Tensor y = ops::l2_normalize_fwd(value(x), &diag_.zero_norm_rows);
        return push(std::move(y), [x](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            const Tensor& xv = t.value(x);
            Tensor& gx = t.nodes_[x.idx].grad;
            const std::size_t d = xv.rank() == 2 ? xv.cols() : xv.size();
            const std::size_t batch = xv.size() / d;
            for (std::size_t r = 0; r < batch; ++r) {
                const double* xr = xv.data() + r * d;
                const double* gyr = gy.data() + r * d;
                double* gxr = gx.data() + r * d;
                double sq = 0.0;
                for (std::size_t j = 0; j < d; ++j) sq += xr[j] * xr[j];
                const double norm = std::sqrt(sq);
                if (norm == 0.0) continue;  // zero rows carry no gradient
                const double s = norm + kNormEps;
                double xdot = 0.0;
                for (std::size_t j = 0; j < d; ++j) xdot += xr[j] * gyr[j];
                const double c = xdot / (norm * s * s);
                for (std::size_t j = 0; j < d; ++j) gxr[j] += gyr[j] / s - c * xr[j];
            }
        }, {x});
    }

    Ref mean_pool(Ref x) {
        Tensor y = ops::mean_pool_fwd(value(x));
        return push(std::move(y), [x](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            const Tensor& xv = t.value(x);
            Tensor& gx = t.nodes_[x.idx].grad;
            const std::size_t n = xv.rows(), d = xv.cols();
            const double inv = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                double* gxr = gx.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) gxr[j] += gy[j] * inv;
            }
        }, {x});
    }

    Ref sigmoid(Ref x) {
        Tensor y = ops::sigmoid_fwd(value(x));
        return push(std::move(y), [x](Tape& t, std::uint32_t self) {
            const Tensor& yv = t.nodes_[self].value;
            const Tensor& gy = t.nodes_[self].grad;
            Tensor& gx = t.nodes_[x.idx].grad;
            for (std::size_t i = 0; i < yv.size(); ++i) gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
        }, {x});
    }

    Ref relu(Ref x) {
        Tensor y = ops::relu_fwd(value(x));
        return push(std::move(y), [x](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            const Tensor& xv = t.value(x);
            Tensor& gx = t.nodes_[x.idx].grad;
            // subgradient at 0 is 0
            for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += xv[i] > 0.0 ? gy[i] : 0.0;
        }, {x});
    }

    Ref cosine(Ref a, Ref b) {
        bool zero = false;
        double c = ops::cosine_fwd(value(a), value(b), &zero);
        if (zero) ++diag_.zero_cosine;
        return push(Tensor::scalar(c), [a, b, zero](Tape& t, std::uint32_t self) {
            if (zero) return;  // defined as 0 with zero gradient
            const double g = t.nodes_[self].grad[0];
            const double c = t.nodes_[self].value[0];
            const Tensor& av = t.value(a);
            const Tensor& bv = t.value(b);
            Tensor& ga = t.nodes_[a.idx].grad;
            Tensor& gb = t.nodes_[b.idx].grad;
            double na = 0.0, nb = 0.0;
            for (std::size_t i = 0; i < av.size(); ++i) {
                na += av[i] * av[i];
                nb += bv[i] * bv[i];
            }
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            const double inv = 1.0 / (na * nb);
            for (std::size_t i = 0; i < av.size(); ++i) {
                ga[i] += g * (bv[i] * inv - c * av[i] / (na * na));
                gb[i] += g * (av[i] * inv - c * bv[i] / (nb * nb));
            }
        }, {a, b});
    }

    Ref concat(Ref a, Ref b) {
        Tensor y = ops::concat_fwd(value(a), value(b));
        return push(std::move(y), [a, b](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            Tensor& ga = t.nodes_[a.idx].grad;
            Tensor& gb = t.nodes_[b.idx].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[ga.size() + i];
        }, {a, b});
    }

    Ref add(Ref a, Ref b) { return ew2(a, b, '+'); }
    Ref sub(Ref a, Ref b) { return ew2(a, b, '-'); }
    Ref mul(Ref a, Ref b) { return ew2(a, b, '*'); }

    Ref scale(Ref a, double c) {
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c;
        return push(std::move(y), [a, c](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            Tensor& ga = t.nodes_[a.idx].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * gy[i];
        }, {a});
    }

    Ref add_const(Ref a, double c) {
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += c;
        return push(std::move(y), [a](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            Tensor& ga = t.nodes_[a.idx].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
        }, {a});
    }

    // Elementwise product with a fixed mask (dropout and ablation switches).
    Ref mul_mask(Ref a, Tensor mask) {
        if (!value(a).same_shape(mask)) throw validation_error("mul_mask: shape mismatch");
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
        auto m = std::make_shared<Tensor>(std::move(mask));
        return push(std::move(y), [a, m](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            Tensor& ga = t.nodes_[a.idx].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*m)[i] * gy[i];
        }, {a});
    }

    Ref square(Ref a) {
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= y[i];
        return push(std::move(y), [a](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            const Tensor& av = t.value(a);
            Tensor& ga = t.nodes_[a.idx].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * av[i] * gy[i];
        }, {a});
    }

    Ref sum(Ref a) {
        double s = 0.0;
        for (std::size_t i = 0; i < value(a).size(); ++i) s += value(a)[i];
        return push(Tensor::scalar(s), [a](Tape& t, std::uint32_t self) {
            const double g = t.nodes_[self].grad[0];
            Tensor& ga = t.nodes_[a.idx].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        }, {a});
    }

    Ref mean(Ref a) {
        const std::size_t n = value(a).size();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += value(a)[i];
        return push(Tensor::scalar(s / static_cast<double>(n)), [a, n](Tape& t, std::uint32_t self) {
            const double g = t.nodes_[self].grad[0] / static_cast<double>(n);
            Tensor& ga = t.nodes_[a.idx].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        }, {a});
    }

    const Tensor& value(Ref r) const { return nodes_[r.idx].value; }
    const Tensor& grad(Ref r) const { return nodes_[r.idx].grad; }
    const Diagnostics& diagnostics() const { return diag_; }

    // Reverse sweep from a scalar output. Accumulates into the grad of every
    // bound Parameter (summing with whatever is already there).
    void backward(Ref out) {
        if (value(out).size() != 1) throw validation_error("backward: output must be scalar");
        for (auto& n : nodes_) n.grad.fill(0.0);
        nodes_[out.idx].grad[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(*this, static_cast<std::uint32_t>(i));
        }
        for (auto& n : nodes_) {
            if (n.bound) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
            }
        }
    }

private:
    using BackFn = std::function<void(Tape&, std::uint32_t)>;

    struct Node {
        Tensor value;
        Tensor grad;
        BackFn back;
        Parameter* bound = nullptr;
    };

    Ref push(Tensor v, BackFn back, std::initializer_list<Ref> parents) {
        for (Ref p : parents) {
            if (!p.valid() || p.idx >= nodes_.size()) throw validation_error("tape: invalid parent ref");
        }
        if (!v.all_finite()) throw divergence_error("tape: non-finite value produced");
        Node n;
        n.grad = Tensor::zeros(v.shape());
        n.value = std::move(v);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Ref{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    Ref ew2(Ref a, Ref b, char op) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (!av.same_shape(bv)) throw validation_error("elementwise: shape mismatch");
        Tensor y(av.shape());
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = op == '+' ? av[i] + bv[i] : op == '-' ? av[i] - bv[i] : av[i] * bv[i];
        }
        return push(std::move(y), [a, b, op](Tape& t, std::uint32_t self) {
            const Tensor& gy = t.nodes_[self].grad;
            Tensor& ga = t.nodes_[a.idx].grad;
            Tensor& gb = t.nodes_[b.idx].grad;
            if (op == '*') {
                const Tensor& av = t.value(a);
                const Tensor& bv = t.value(b);
                for (std::size_t i = 0; i < gy.size(); ++i) {
                    ga[i] += gy[i] * bv[i];
                    gb[i] += gy[i] * av[i];
                }
            } else {
                const double sb = op == '+' ? 1.0 : -1.0;
                for (std::size_t i = 0; i < gy.size(); ++i) {
                    ga[i] += gy[i];
                    gb[i] += sb * gy[i];
                }
            }
        }, {a, b});
    }

    std::vector<Node> nodes_;
    Diagnostics diag_;
};

// Bias-corrected Adam over a fixed parameter list. `t` is the 1-based step.
struct AdamState {
    Tensor m, v;
    explicit AdamState(const Tensor& like) : m(Tensor::zeros(like.shape())), v(Tensor::zeros(like.shape())) {}
};

inline void adam_step(const std::vector<Parameter*>& params, std::vector<AdamState>& states,
                      std::uint64_t t, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = kAdamEps) {
    if (params.size() != states.size() || t == 0) {
        throw validation_error("adam_step: state mismatch or t == 0");
    }
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Parameter& prm = *params[p];
        AdamState& st = states[p];
        for (std::size_t i = 0; i < prm.value.size(); ++i) {
            const double g = prm.grad[i];
            st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
            st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
            const double mhat = st.m[i] / bc1;
            const double vhat = st.v[i] / bc2;
            prm.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = kAdamEps)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        states_.reserve(params_.size());
        for (auto* p : params_) states_.emplace_back(p->value);
    }

    void step() { adam_step(params_, states_, ++t_, lr_, beta1_, beta2_, eps_); }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

private:
    std::vector<Parameter*> params_;
    std::vector<AdamState> states_;
    std::uint64_t t_ = 0;
    double lr_, beta1_, beta2_, eps_;
};

// Compares reverse-mode gradients against central finite differences,
// coordinate by coordinate. `build` must be a deterministic function of the
// parameter values. Relative error uses |ad - fd| / max(1, |ad|, |fd|) so
// that near-zero gradients are judged on absolute error.
inline double check_gradients(const std::vector<Parameter*>& params,
                              const std::function<Tape::Ref(Tape&)>& build, double h = 1e-5) {
    for (auto* p : params) p->zero_grad();
    std::vector<Tensor> ad;
    {
        Tape tape;
        Tape::Ref out = build(tape);
        tape.backward(out);
    }
    ad.reserve(params.size());
    for (auto* p : params) ad.push_back(p->grad);

    double max_rel = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& v = params[p]->value;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double saved = v[i];
            v[i] = saved + h;
            double f_plus;
            {
                Tape tape;
                f_plus = tape.value(build(tape))[0];
            }
            v[i] = saved - h;
            double f_minus;
            {
                Tape tape;
                f_minus = tape.value(build(tape))[0];
            }
            v[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double a = ad[p][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(fd)});
            max_rel = std::max(max_rel, std::abs(a - fd) / denom);
        }
    }
    return max_rel;
}

}  // namespace tanszoo
