#include "tokgov/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tokgov::nn {

Mat Mat::randn(int r, int c, double stddev, Rng& rng) {
    Mat m(r, c);
    for (auto& v : m.a) v = rng.normal() * stddev;
    return m;
}

Mat Mat::identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void gemm_nn(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
    if (A.cols != B.rows || C.rows != A.rows || C.cols != B.cols)
        throw ShapeError("gemm_nn shape mismatch");
    if (!accumulate) C.fill(0.0);
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row_ptr(i);
        double* crow = C.row_ptr(i);
        for (int k = 0; k < A.cols; ++k) {
            double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = B.row_ptr(k);
            for (int j = 0; j < B.cols; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
    if (A.cols != B.cols || C.rows != A.rows || C.cols != B.rows)
        throw ShapeError("gemm_nt shape mismatch");
    if (!accumulate) C.fill(0.0);
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row_ptr(i);
        double* crow = C.row_ptr(i);
        for (int j = 0; j < B.rows; ++j) {
            const double* brow = B.row_ptr(j);
            double acc = 0.0;
            for (int k = 0; k < A.cols; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

void gemm_tn(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
    if (A.rows != B.rows || C.rows != A.cols || C.cols != B.cols)
        throw ShapeError("gemm_tn shape mismatch");
    if (!accumulate) C.fill(0.0);
    for (int k = 0; k < A.rows; ++k) {
        const double* arow = A.row_ptr(k);
        const double* brow = B.row_ptr(k);
        for (int i = 0; i < A.cols; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = C.row_ptr(i);
            for (int j = 0; j < B.cols; ++j) crow[j] += av * brow[j];
        }
    }
}

Node Graph::alloc(int r, int c, bool needs_grad) {
    pool_.emplace_back();
    Node n = &pool_.back();
    n->val = Mat(r, c);
    n->needs_grad = needs_grad;
    if (needs_grad) n->grad = Mat(r, c);
    return n;
}

Node Graph::constant(Mat m) {
    pool_.emplace_back();
    Node n = &pool_.back();
    n->val = std::move(m);
    n->needs_grad = false;
    return n;
}

Node Graph::leaf(Mat m) {
    pool_.emplace_back();
    Node n = &pool_.back();
    n->val = std::move(m);
    n->grad = Mat(n->val.rows, n->val.cols);
    n->needs_grad = true;
    return n;
}

Node Graph::matmul(Node a, Node b) {
    Node out = alloc(a->val.rows, b->val.cols, a->needs_grad || b->needs_grad);
    gemm_nn(a->val, b->val, out->val, false);
    if (out->needs_grad) {
        tape_.push_back([a, b, out] {
            if (a->needs_grad) gemm_nt(out->grad, b->val, a->grad, true);
            if (b->needs_grad) gemm_tn(a->val, out->grad, b->grad, true);
        });
    }
    return out;
}

Node Graph::matmul_nt(Node a, Node b) {
    Node out = alloc(a->val.rows, b->val.rows, a->needs_grad || b->needs_grad);
    gemm_nt(a->val, b->val, out->val, false);
    if (out->needs_grad) {
        tape_.push_back([a, b, out] {
            if (a->needs_grad) gemm_nn(out->grad, b->val, a->grad, true);
            if (b->needs_grad) gemm_tn(out->grad, a->val, b->grad, true);
        });
    }
    return out;
}

Node Graph::add(Node a, Node b) {
    if (a->val.rows != b->val.rows || a->val.cols != b->val.cols)
        throw ShapeError("add shape mismatch");
    Node out = alloc(a->val.rows, a->val.cols, a->needs_grad || b->needs_grad);
    for (size_t i = 0; i < out->val.size(); ++i) out->val.a[i] = a->val.a[i] + b->val.a[i];
    if (out->needs_grad) {
        tape_.push_back([a, b, out] {
            if (a->needs_grad)
                for (size_t i = 0; i < out->grad.size(); ++i) a->grad.a[i] += out->grad.a[i];
            if (b->needs_grad)
                for (size_t i = 0; i < out->grad.size(); ++i) b->grad.a[i] += out->grad.a[i];
        });
    }
    return out;
}

Node Graph::add_row(Node a, Node row) {
    if (row->val.rows != 1 || row->val.cols != a->val.cols)
        throw ShapeError("add_row shape mismatch");
    Node out = alloc(a->val.rows, a->val.cols, a->needs_grad || row->needs_grad);
    for (int i = 0; i < a->val.rows; ++i)
        for (int j = 0; j < a->val.cols; ++j) out->val(i, j) = a->val(i, j) + row->val(0, j);
    if (out->needs_grad) {
        tape_.push_back([a, row, out] {
            if (a->needs_grad)
                for (size_t i = 0; i < out->grad.size(); ++i) a->grad.a[i] += out->grad.a[i];
            if (row->needs_grad)
                for (int i = 0; i < out->grad.rows; ++i)
                    for (int j = 0; j < out->grad.cols; ++j) row->grad(0, j) += out->grad(i, j);
        });
    }
    return out;
}

Node Graph::scale(Node a, double c) {
    Node out = alloc(a->val.rows, a->val.cols, a->needs_grad);
    for (size_t i = 0; i < a->val.size(); ++i) out->val.a[i] = a->val.a[i] * c;
    if (out->needs_grad) {
        tape_.push_back([a, c, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad.a[i] += out->grad.a[i] * c;
        });
    }
    return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

Node Graph::gelu(Node a) {
    Node out = alloc(a->val.rows, a->val.cols, a->needs_grad);
    for (size_t i = 0; i < a->val.size(); ++i) {
        double x = a->val.a[i];
        double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
        out->val.a[i] = 0.5 * x * (1.0 + t);
    }
    if (out->needs_grad) {
        tape_.push_back([a, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) {
                double x = a->val.a[i];
                double u = kGeluC * (x + 0.044715 * x * x * x);
                double t = std::tanh(u);
                double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
                double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                a->grad.a[i] += out->grad.a[i] * d;
            }
        });
    }
    return out;
}

Node Graph::layer_norm(Node a, Node gain, Node bias) {
    const int c = a->val.cols;
    if (gain->val.cols != c || bias->val.cols != c || gain->val.rows != 1 || bias->val.rows != 1)
        throw ShapeError("layer_norm parameter shape mismatch");
    constexpr double eps = 1e-5;
    Node out = alloc(a->val.rows, c, a->needs_grad || gain->needs_grad || bias->needs_grad);
    // cache per-row mean and inv std for the backward pass
    auto stats = std::make_shared<Mat>(a->val.rows, 2);
    for (int i = 0; i < a->val.rows; ++i) {
        const double* x = a->val.row_ptr(i);
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= c;
        double inv = 1.0 / std::sqrt(var + eps);
        (*stats)(i, 0) = mean;
        (*stats)(i, 1) = inv;
        double* y = out->val.row_ptr(i);
        for (int j = 0; j < c; ++j) y[j] = (x[j] - mean) * inv * gain->val(0, j) + bias->val(0, j);
    }
    if (out->needs_grad) {
        tape_.push_back([a, gain, bias, out, stats, c] {
            for (int i = 0; i < a->val.rows; ++i) {
                const double* x = a->val.row_ptr(i);
                const double* dy = out->grad.row_ptr(i);
                double mean = (*stats)(i, 0), inv = (*stats)(i, 1);
                double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
                for (int j = 0; j < c; ++j) {
                    double xhat = (x[j] - mean) * inv;
                    double dyg = dy[j] * gain->val(0, j);
                    sum_dyg += dyg;
                    sum_dyg_xhat += dyg * xhat;
                    if (gain->needs_grad) gain->grad(0, j) += dy[j] * xhat;
                    if (bias->needs_grad) bias->grad(0, j) += dy[j];
                }
                if (a->needs_grad) {
                    double* dx = a->grad.row_ptr(i);
                    for (int j = 0; j < c; ++j) {
                        double xhat = (x[j] - mean) * inv;
                        double dyg = dy[j] * gain->val(0, j);
                        dx[j] += inv * (dyg - sum_dyg / c - xhat * sum_dyg_xhat / c);
                    }
                }
            }
        });
    }
    return out;
}

Node Graph::masked_softmax_rows(Node a, const std::vector<uint8_t>& key_mask) {
    if (static_cast<int>(key_mask.size()) != a->val.cols)
        throw ShapeError("mask length does not match column count");
    Node out = alloc(a->val.rows, a->val.cols, a->needs_grad);
    const int c = a->val.cols;
    for (int i = 0; i < a->val.rows; ++i) {
        const double* x = a->val.row_ptr(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j)
            if (key_mask[j] && x[j] > mx) mx = x[j];
        double denom = 0.0;
        double* y = out->val.row_ptr(i);
        for (int j = 0; j < c; ++j) {
            y[j] = key_mask[j] ? std::exp(x[j] - mx) : 0.0;
            denom += y[j];
        }
        for (int j = 0; j < c; ++j) y[j] /= denom;
    }
    if (out->needs_grad) {
        tape_.push_back([a, out, c] {
            for (int i = 0; i < a->val.rows; ++i) {
                const double* p = out->val.row_ptr(i);
                const double* dy = out->grad.row_ptr(i);
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += p[j] * dy[j];
                double* dx = a->grad.row_ptr(i);
                for (int j = 0; j < c; ++j) dx[j] += p[j] * (dy[j] - dot);
            }
        });
    }
    return out;
}

Node Graph::col_slice(Node a, int c0, int len) {
    if (c0 < 0 || c0 + len > a->val.cols) throw ShapeError("col_slice out of range");
    Node out = alloc(a->val.rows, len, a->needs_grad);
    for (int i = 0; i < a->val.rows; ++i)
        for (int j = 0; j < len; ++j) out->val(i, j) = a->val(i, c0 + j);
    if (out->needs_grad) {
        tape_.push_back([a, out, c0, len] {
            for (int i = 0; i < out->grad.rows; ++i)
                for (int j = 0; j < len; ++j) a->grad(i, c0 + j) += out->grad(i, j);
        });
    }
    return out;
}

Node Graph::concat_cols(std::span<const Node> parts) {
    int rows = parts[0]->val.rows, cols = 0;
    bool grad = false;
    for (Node p : parts) {
        if (p->val.rows != rows) throw ShapeError("concat_cols row mismatch");
        cols += p->val.cols;
        grad = grad || p->needs_grad;
    }
    Node out = alloc(rows, cols, grad);
    int off = 0;
    for (Node p : parts) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < p->val.cols; ++j) out->val(i, off + j) = p->val(i, j);
        off += p->val.cols;
    }
    if (grad) {
        std::vector<Node> ps(parts.begin(), parts.end());
        tape_.push_back([ps, out, rows] {
            int o = 0;
            for (Node p : ps) {
                if (p->needs_grad)
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < p->val.cols; ++j) p->grad(i, j) += out->grad(i, o + j);
                o += p->val.cols;
            }
        });
    }
    return out;
}

Node Graph::concat_rows(std::span<const Node> parts) {
    int cols = parts[0]->val.cols, rows = 0;
    bool grad = false;
    for (Node p : parts) {
        if (p->val.cols != cols) throw ShapeError("concat_rows column mismatch");
        rows += p->val.rows;
        grad = grad || p->needs_grad;
    }
    Node out = alloc(rows, cols, grad);
    int off = 0;
    for (Node p : parts) {
        for (int i = 0; i < p->val.rows; ++i)
            for (int j = 0; j < cols; ++j) out->val(off + i, j) = p->val(i, j);
        off += p->val.rows;
    }
    if (grad) {
        std::vector<Node> ps(parts.begin(), parts.end());
        tape_.push_back([ps, out, cols] {
            int o = 0;
            for (Node p : ps) {
                if (p->needs_grad)
                    for (int i = 0; i < p->val.rows; ++i)
                        for (int j = 0; j < cols; ++j) p->grad(i, j) += out->grad(o + i, j);
                o += p->val.rows;
            }
        });
    }
    return out;
}

Node Graph::gather_rows(Node table, std::vector<int> idx) {
    for (int i : idx)
        if (i < 0 || i >= table->val.rows) throw ShapeError("gather_rows index out of range");
    Node out = alloc(static_cast<int>(idx.size()), table->val.cols, table->needs_grad);
    for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < table->val.cols; ++j) out->val(static_cast<int>(i), j) = table->val(idx[i], j);
    if (out->needs_grad) {
        tape_.push_back([table, out, idx = std::move(idx)] {
            for (size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < table->val.cols; ++j)
                    table->grad(idx[i], j) += out->grad(static_cast<int>(i), j);
        });
    }
    return out;
}

Node Graph::l2_normalize_rows(Node a) {
    constexpr double eps = 1e-12;
    Node out = alloc(a->val.rows, a->val.cols, a->needs_grad);
    auto norms = std::make_shared<std::vector<double>>(a->val.rows);
    for (int i = 0; i < a->val.rows; ++i) {
        const double* x = a->val.row_ptr(i);
        double s = 0.0;
        for (int j = 0; j < a->val.cols; ++j) s += x[j] * x[j];
        double n = std::sqrt(s) + eps;
        (*norms)[i] = n;
        double* y = out->val.row_ptr(i);
        for (int j = 0; j < a->val.cols; ++j) y[j] = x[j] / n;
    }
    if (out->needs_grad) {
        tape_.push_back([a, out, norms] {
            for (int i = 0; i < a->val.rows; ++i) {
                const double* y = out->val.row_ptr(i);
                const double* dy = out->grad.row_ptr(i);
                double n = (*norms)[i];
                double dot = 0.0;
                for (int j = 0; j < a->val.cols; ++j) dot += y[j] * dy[j];
                double* dx = a->grad.row_ptr(i);
                for (int j = 0; j < a->val.cols; ++j) dx[j] += (dy[j] - y[j] * dot) / n;
            }
        });
    }
    return out;
}

Node Graph::exp_scalar_clamped(Node s, double cap) {
    if (s->val.rows != 1 || s->val.cols != 1) throw ShapeError("exp_scalar expects a 1x1 node");
    Node out = alloc(1, 1, s->needs_grad);
    double v = std::exp(s->val(0, 0));
    bool clamped = v > cap;
    out->val(0, 0) = clamped ? cap : v;
    if (out->needs_grad) {
        tape_.push_back([s, out, clamped] {
            if (!clamped) s->grad(0, 0) += out->grad(0, 0) * out->val(0, 0);
        });
    }
    return out;
}

Node Graph::mul_scalar_node(Node a, Node s) {
    if (s->val.rows != 1 || s->val.cols != 1) throw ShapeError("mul_scalar_node expects a 1x1 scalar");
    Node out = alloc(a->val.rows, a->val.cols, a->needs_grad || s->needs_grad);
    double sv = s->val(0, 0);
    for (size_t i = 0; i < a->val.size(); ++i) out->val.a[i] = a->val.a[i] * sv;
    if (out->needs_grad) {
        tape_.push_back([a, s, out, sv] {
            if (a->needs_grad)
                for (size_t i = 0; i < out->grad.size(); ++i) a->grad.a[i] += out->grad.a[i] * sv;
            if (s->needs_grad) {
                double acc = 0.0;
                for (size_t i = 0; i < out->grad.size(); ++i) acc += out->grad.a[i] * a->val.a[i];
                s->grad(0, 0) += acc;
            }
        });
    }
    return out;
}

Graph::ItcReport Graph::itc_from_logits(Node logits) {
    const int b = logits->val.rows;
    if (logits->val.cols != b) throw ShapeError("contrastive logits must be square");
    ItcReport rep;
    rep.p_i2t = Mat(b, b);
    rep.p_t2i = Mat(b, b);
    auto softmax_into = [b](const Mat& src, bool transpose, Mat& dst) {
        for (int i = 0; i < b; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < b; ++j) {
                double v = transpose ? src(j, i) : src(i, j);
                if (v > mx) mx = v;
            }
            double denom = 0.0;
            for (int j = 0; j < b; ++j) {
                double v = transpose ? src(j, i) : src(i, j);
                dst(i, j) = std::exp(v - mx);
                denom += dst(i, j);
            }
            for (int j = 0; j < b; ++j) dst(i, j) /= denom;
        }
    };
    softmax_into(logits->val, false, rep.p_i2t);
    softmax_into(logits->val, true, rep.p_t2i);

    double loss = 0.0;
    for (int i = 0; i < b; ++i)
        loss += -std::log(std::max(rep.p_i2t(i, i), 1e-300)) - std::log(std::max(rep.p_t2i(i, i), 1e-300));
    loss /= 2.0 * b;

    Node out = alloc(1, 1, logits->needs_grad);
    out->val(0, 0) = loss;
    if (out->needs_grad) {
        auto pi = std::make_shared<Mat>(rep.p_i2t);
        auto pt = std::make_shared<Mat>(rep.p_t2i);
        tape_.push_back([logits, out, pi, pt, b] {
            double g = out->grad(0, 0) / (2.0 * b);
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < b; ++j) {
                    double d = (*pi)(i, j) - (i == j ? 1.0 : 0.0);
                    d += (*pt)(j, i) - (i == j ? 1.0 : 0.0);
                    logits->grad(i, j) += g * d;
                }
        });
    }
    rep.loss = out;
    return rep;
}

void Graph::backward(Node scalar_loss) {
    if (scalar_loss->val.rows != 1 || scalar_loss->val.cols != 1)
        throw ShapeError("backward expects a scalar loss node");
    scalar_loss->grad(0, 0) = 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

void AdamW::step(std::span<Param* const> params, double lr, double weight_decay) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Param* p : params) {
        auto& val = p->t.val.a;
        auto& grad = p->t.grad.a;
        auto& m = p->adam_m.a;
        auto& v = p->adam_v.a;
        // biases, norm gains and the temperature are 1-row and skip decay
        double wd = p->t.val.rows > 1 ? weight_decay : 0.0;
        for (size_t i = 0; i < val.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
            double mh = m[i] / bc1;
            double vh = v[i] / bc2;
            val[i] -= lr * (mh / (std::sqrt(vh) + eps_) + wd * val[i]);
        }
    }
}

void AdamW::zero_grad(std::span<Param* const> params) {
    for (Param* p : params) p->t.grad.fill(0.0);
}

double clip_grad_norm(std::span<Param* const> params, double max_norm) {
    double total = 0.0;
    for (Param* p : params)
        for (double g : p->t.grad.a) total += g * g;
    total = std::sqrt(total);
    if (total > max_norm && total > 0.0) {
        double s = max_norm / total;
        for (Param* p : params)
            for (double& g : p->t.grad.a) g *= s;
    }
    return total;
}

KMeansResult kmeans(const Mat& points, int k, int max_iters, uint64_t seed) {
    const int n = points.rows, d = points.cols;
    if (k <= 0 || n == 0) throw ConfigError("kmeans requires k >= 1 and at least one point");
    k = std::min(k, n);
    Rng rng(seed);
    KMeansResult res;
    res.centroids = Mat(k, d);
    auto init = rng.sample_without_replacement(n, k);
    for (int c = 0; c < k; ++c)
        for (int j = 0; j < d; ++j) res.centroids(c, j) = points(init[c], j);
    res.assignment.assign(n, 0);

    auto dist2 = [&](int i, int c) {
        double s = 0.0;
        const double* p = points.row_ptr(i);
        const double* q = res.centroids.row_ptr(c);
        for (int j = 0; j < d; ++j) {
            double t = p[j] - q[j];
            s += t * t;
        }
        return s;
    };

    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = dist2(i, 0);
            for (int c = 1; c < k; ++c) {
                double dd = dist2(i, c);
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (res.assignment[i] != best) {
                res.assignment[i] = best;
                changed = true;
            }
        }
        Mat sums(k, d);
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            counts[res.assignment[i]]++;
            for (int j = 0; j < d; ++j) sums(res.assignment[i], j) += points(i, j);
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // reseed to the globally farthest point
                int far_i = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    double dd = dist2(i, res.assignment[i]);
                    if (dd > far_d) {
                        far_d = dd;
                        far_i = i;
                    }
                }
                for (int j = 0; j < d; ++j) res.centroids(c, j) = points(far_i, j);
                changed = true;
            } else {
                for (int j = 0; j < d; ++j) res.centroids(c, j) = sums(c, j) / counts[c];
            }
        }
        if (!changed && iter > 0) break;
    }
    // final assignment against the last centroids
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double bd = dist2(i, 0);
        for (int c = 1; c < k; ++c) {
            double dd = dist2(i, c);
            if (dd < bd) {
                bd = dd;
                best = c;
            }
        }
        res.assignment[i] = best;
    }
    return res;
}

}  // namespace tokgov::nn
