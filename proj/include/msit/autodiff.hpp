#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "msit/ops.hpp"
#include "msit/tensor.hpp"

namespace msit::autodiff {

struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

using NodePtr = std::shared_ptr<Node>;

// Handle to a tape node. Ops record backward closures only while grad mode is
// on and some input requires a gradient, so inference builds no graph.
class Var {
public:
    Var() = default;
    explicit Var(Tensor v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& value_mut() { return node_->value; }
    const Tensor& grad() const;
    bool has_grad() const { return node_ && node_->has_grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad();
    NodePtr node() const { return node_; }

    static Var from_node(NodePtr n);

private:
    NodePtr node_;
};

bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool saved;
};

// run reverse-mode accumulation from a scalar root
void backward(const Var& root);

// ---- elementwise / linear algebra ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var add_row_bias(const Var& x, const Var& bias); // bias [1,1,1,C] over rows of [1,1,R,C]
Var gelu(const Var& x);
Var softmax_lastdim(const Var& x);
Var abs_val(const Var& x);
Var mean_all(const Var& x);
// mean absolute error; the forward sum runs over sorted magnitudes, so the
// value is exactly invariant under permutations of the entries
Var l1_loss(const Var& pred, const Var& target);

// ---- structure ----
Var reshape(const Var& x, int n, int c, int h, int w);
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int c0, int c1);
Var concat_cols(const Var& a, const Var& b);

// ---- convolution ----
Var conv2d(const Var& x, const Var& kernel, const Var& bias, PadMode pad); // bias may be undefined
Var depthwise_conv2d(const Var& x, const Var& kernel, PadMode pad);
// broadcast G per-group kernels [G,1,k,k] to C channels (contiguous groups)
Var expand_group_kernels(const Var& kernels, int channels);

// ---- sampling / gathering ----
Var grid_sample_bilinear(const Var& field, const std::vector<Coord>& coords); // -> [1,1,Q,C]
Var gather_pixels(const Var& field, const std::vector<int>& flat_idx);        // -> [1,1,Q,C]

// ---- coordinate encoding ----
// delta rows (dy,dx); omega [1,1,g,2]; result [1,1,R,4g]: 2g sines then 2g
// cosines of 2*pi*omega[j][k]*delta[i][k], ordered (j,k)
Var fourier_features(const Tensor& delta, const Var& omega);
// per-neighbor-column mix: out[q][j] = dot(feat[q*r2+j], w[:,j]) + b[j]
Var fourier_mix(const Var& feat, const Var& w, const Var& b, int queries, int keys);

// ---- attention cores ----
// scores[q*u+h][j] = <qhat[q], khat[q*keys+j]>_head(h) / logit_scale
Var attn_scores(const Var& qhat, const Var& khat, int heads, double logit_scale);
// add per-query bias rows to every head: out[q*u+h] = scores[q*u+h] + bias[q]
Var add_head_bias(const Var& scores, const Var& bias, int heads);
// out[q]_head(h) = sum_j weights[q*u+h][j] * vhat[q*keys+j]_head(h)
Var attn_apply(const Var& weights, const Var& vhat, int heads);

} // namespace msit::autodiff
