#pragma once

#include <string>
#include <vector>

#include "skillrec/neuralkit/featurizer.hpp"
#include "skillrec/neuralkit/tensor.hpp"

namespace skillrec {
class Rng;
}

namespace skillrec::nk {

// ---------------------------------------------------------------------------
// Hashed embedding bag: out = sum_i weight_i * table.row(index_i)

RowVec embed_bag_forward(const Mat& table, const SparseFeatures& features);
void embed_bag_backward(TensorId table, const SparseFeatures& features, const RowVec& grad_out,
                        Gradients& grads);

// ---------------------------------------------------------------------------
// Affine layer over row-batched inputs: Y = X W^T + b, W is (out x in).

struct Dense {
  TensorId weight = 0;
  TensorId bias = 0;
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  bool has_bias = true;
};

Dense make_dense(Parameters& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                 Rng& rng, bool bias = true);
Mat dense_forward(const Parameters& params, const Dense& layer, const Mat& x);
/// Accumulates weight/bias gradients and returns dL/dX.
Mat dense_backward(const Parameters& params, const Dense& layer, const Mat& x, const Mat& grad_y,
                   Gradients& grads);

// ---------------------------------------------------------------------------
// Multi-layer perceptron. The activation follows every layer (the last one
// only when activate_last); inverted dropout follows every activated layer
// in training mode.

enum class Activation { Identity, Relu, Tanh };

struct Mlp {
  std::vector<Dense> layers;
  Activation activation = Activation::Relu;
  bool activate_last = true;
  double dropout = 0.0;

  Eigen::Index in() const { return layers.front().in; }
  Eigen::Index out() const { return layers.back().out; }
};

struct MlpCache {
  std::vector<Mat> inputs;       // input to each layer
  std::vector<Mat> activations;  // post-activation output of each layer (before dropout)
  std::vector<Mat> masks;        // dropout scale mask, empty when not applied
};

Mlp make_mlp(Parameters& params, const std::string& name, Eigen::Index in,
             const std::vector<int>& sizes, Activation activation, bool activate_last,
             double dropout, Rng& rng);

/// `rng` is required when train is true and dropout > 0.
Mat mlp_forward(const Parameters& params, const Mlp& mlp, const Mat& x, bool train, Rng* rng,
                MlpCache* cache);
Mat mlp_backward(const Parameters& params, const Mlp& mlp, const MlpCache& cache,
                 const Mat& grad_y, Gradients& grads);

/// Single-vector convenience used by tests and the bindings. Throws
/// InvalidArgument if the input dimension does not match the first layer.
Vec mlp_forward(const Parameters& params, const Mlp& mlp, const Vec& x, bool train, Rng* rng);

// ---------------------------------------------------------------------------
// Gated recurrent unit with update gate z and reset gate r:
//   z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//   r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//   n_t = tanh(W_n x_t + U_n (r_t * h_{t-1}) + b_n)
//   h_t = (1 - z_t) * h_{t-1} + z_t * n_t,      h_{-1} = 0
// W stacks [W_z; W_r; W_n] as (3H x in), U stacks [U_z; U_r; U_n] as (3H x H).

struct Gru {
  TensorId w = 0;
  TensorId u = 0;
  TensorId b = 0;
  Eigen::Index in = 0;
  Eigen::Index hidden = 0;
};

struct GruCache {
  Mat x, z, r, n, h;  // T rows each
};

Gru make_gru(Parameters& params, const std::string& name, Eigen::Index in, Eigen::Index hidden,
             Rng& rng);
/// X is (T x in); returns hidden states (T x H).
Mat gru_forward(const Parameters& params, const Gru& gru, const Mat& x, GruCache* cache);
Mat gru_backward(const Parameters& params, const Gru& gru, const GruCache& cache,
                 const Mat& grad_h, Gradients& grads);

/// Bidirectional GRU. Output row t is [forward h_t, backward h_t] where the
/// backward cell reads the sequence from the end, so every output row sees
/// the whole input.
struct BiGru {
  Gru forward;
  Gru backward;
  Eigen::Index hidden() const { return forward.hidden; }
};

struct BiGruCache {
  GruCache forward, backward;
};

BiGru make_bigru(Parameters& params, const std::string& name, Eigen::Index in,
                 Eigen::Index hidden, Rng& rng);
/// Throws InvalidArgument on an empty sequence.
Mat bigru_forward(const Parameters& params, const BiGru& rnn, const Mat& x, BiGruCache* cache);
Mat bigru_backward(const Parameters& params, const BiGru& rnn, const BiGruCache& cache,
                   const Mat& grad_out, Gradients& grads);

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace skillrec::nk
