#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tokgov/common.hpp"

namespace tokgov::nn {

// Row-major dense matrix, double precision. Training math runs in double so
// the finite-difference gradient contract (h=1e-4, rel err <= 1e-3) is not
// drowned by rounding; on-disk formats stay float32.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
    double* row_ptr(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const double* row_ptr(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
    size_t size() const { return a.size(); }
    void fill(double v) { std::fill(a.begin(), a.end(), v); }

    static Mat randn(int r, int c, double stddev, Rng& rng);
    static Mat identity(int n);
};

// C (+)= A * B, A * B^T, A^T * B
void gemm_nn(const Mat& A, const Mat& B, Mat& C, bool accumulate);
void gemm_nt(const Mat& A, const Mat& B, Mat& C, bool accumulate);
void gemm_tn(const Mat& A, const Mat& B, Mat& C, bool accumulate);

struct TensorNode {
    Mat val;
    Mat grad;
    bool needs_grad = true;
};
using Node = TensorNode*;

// Named trainable parameter with its optimizer state.
struct Param {
    std::string name;
    TensorNode t;
    Mat adam_m, adam_v;

    Param() = default;
    Param(std::string n, Mat init) : name(std::move(n)) {
        t.val = std::move(init);
        t.grad = Mat(t.val.rows, t.val.cols);
        adam_m = Mat(t.val.rows, t.val.cols);
        adam_v = Mat(t.val.rows, t.val.cols);
    }
};

// One tape per training step. Intermediates live in a deque so Node pointers
// stay valid; parameter nodes are owned by the model and merely referenced.
class Graph {
public:
    Node constant(Mat m);               // leaf without gradient
    Node leaf(Mat m);                   // leaf with gradient (inputs under test)
    Node use(Param& p) { return &p.t; }

    Node matmul(Node a, Node b);        // A*B
    Node matmul_nt(Node a, Node b);     // A*B^T
    Node add(Node a, Node b);
    Node add_row(Node a, Node row);     // broadcast 1 x c row over all rows
    Node scale(Node a, double c);
    Node gelu(Node a);
    Node layer_norm(Node a, Node gain, Node bias);  // per row; gain/bias 1 x c
    // Rowwise softmax; scores in masked key columns are excluded entirely.
    Node masked_softmax_rows(Node a, const std::vector<uint8_t>& key_mask);
    Node col_slice(Node a, int c0, int len);
    Node concat_cols(std::span<const Node> parts);
    Node concat_rows(std::span<const Node> parts);
    Node gather_rows(Node table, std::vector<int> idx);
    Node l2_normalize_rows(Node a);
    Node exp_scalar_clamped(Node s, double cap);    // 1x1, exp with an upper clamp
    Node mul_scalar_node(Node a, Node s);           // s is 1x1

    // Symmetric InfoNCE over scaled logits (b x b). Returns the scalar loss;
    // row-stochastic probabilities for both directions are exposed on the
    // report. Diagonal entries are the matching pairs.
    struct ItcReport {
        Node loss = nullptr;
        Mat p_i2t;  // rowwise softmax of logits
        Mat p_t2i;  // rowwise softmax of logits^T
    };
    ItcReport itc_from_logits(Node logits);

    void backward(Node scalar_loss);

private:
    Node alloc(int r, int c, bool needs_grad);
    std::deque<TensorNode> pool_;
    std::vector<std::function<void()>> tape_;
};

class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<Param* const> params, double lr, double weight_decay);
    void zero_grad(std::span<Param* const> params);
    int64_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Global gradient-norm clipping; returns the pre-clip norm.
double clip_grad_norm(std::span<Param* const> params, double max_norm);

struct KMeansResult {
    Mat centroids;                 // k x d
    std::vector<int> assignment;   // n entries in [0, k)
};

// Lloyd iterations with seeded init; empty clusters are reseeded to the point
// farthest from its centroid. Deterministic for a fixed seed.
KMeansResult kmeans(const Mat& points, int k, int max_iters, uint64_t seed);

}  // namespace tokgov::nn
