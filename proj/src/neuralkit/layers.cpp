#include "skillrec/neuralkit/layers.hpp"

#include <cmath>

#include "skillrec/error.hpp"
#include "skillrec/rng.hpp"

namespace skillrec::nk {

RowVec embed_bag_forward(const Mat& table, const SparseFeatures& features) {
  RowVec out = RowVec::Zero(table.cols());
  for (const auto& e : features.entries) out.noalias() += e.weight * table.row(e.index);
  return out;
}

void embed_bag_backward(TensorId table, const SparseFeatures& features, const RowVec& grad_out,
                        Gradients& grads) {
  for (const auto& e : features.entries) grads.row(table, e.index) += e.weight * grad_out;
}

Dense make_dense(Parameters& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                 Rng& rng, bool bias) {
  Dense d;
  d.in = in;
  d.out = out;
  d.has_bias = bias;
  d.weight = params.add(name + ".weight", glorot_uniform(out, in, rng));
  if (bias) d.bias = params.add(name + ".bias", Mat::Zero(1, out));
  return d;
}

Mat dense_forward(const Parameters& params, const Dense& layer, const Mat& x) {
  if (x.cols() != layer.in)
    throw InvalidArgument("dense layer expects input width " + std::to_string(layer.in) +
                          ", got " + std::to_string(x.cols()));
  Mat y = x * params.value(layer.weight).transpose();
  if (layer.has_bias) y.rowwise() += params.value(layer.bias).row(0);
  return y;
}

Mat dense_backward(const Parameters& params, const Dense& layer, const Mat& x, const Mat& grad_y,
                   Gradients& grads) {
  grads[layer.weight].noalias() += grad_y.transpose() * x;
  if (layer.has_bias) grads[layer.bias].row(0) += grad_y.colwise().sum();
  return grad_y * params.value(layer.weight);
}

namespace {

void apply_activation(Mat& m, Activation a) {
  switch (a) {
    case Activation::Identity:
      break;
    case Activation::Relu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::Tanh:
      m = m.array().tanh();
      break;
  }
}

/// Multiplies grad by the activation derivative, expressed via the activated output.
void activation_backward(Mat& grad, const Mat& activated, Activation a) {
  switch (a) {
    case Activation::Identity:
      break;
    case Activation::Relu:
      grad.array() *= (activated.array() > 0.0).cast<double>();
      break;
    case Activation::Tanh:
      grad.array() *= 1.0 - activated.array().square();
      break;
  }
}

}  // namespace

Mlp make_mlp(Parameters& params, const std::string& name, Eigen::Index in,
             const std::vector<int>& sizes, Activation activation, bool activate_last,
             double dropout, Rng& rng) {
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("dropout must be in [0, 1)");
  Mlp mlp;
  mlp.activation = activation;
  mlp.activate_last = activate_last;
  mlp.dropout = dropout;
  Eigen::Index width = in;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    mlp.layers.push_back(make_dense(params, name + "." + std::to_string(i), width, sizes[i], rng));
    width = sizes[i];
  }
  return mlp;
}

Mat mlp_forward(const Parameters& params, const Mlp& mlp, const Mat& x, bool train, Rng* rng,
                MlpCache* cache) {
  if (cache) {
    cache->inputs.clear();
    cache->activations.clear();
    cache->masks.clear();
  }
  Mat h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    if (cache) cache->inputs.push_back(h);
    Mat y = dense_forward(params, mlp.layers[i], h);
    const bool activated = mlp.activate_last || i + 1 < mlp.layers.size();
    Mat mask;
    if (activated) {
      apply_activation(y, mlp.activation);
      if (cache) cache->activations.push_back(y);
      if (train && mlp.dropout > 0.0) {
        if (!rng) throw InvalidArgument("mlp_forward: dropout in training mode needs an Rng");
        const double keep = 1.0 - mlp.dropout;
        mask.resize(y.rows(), y.cols());
        for (Eigen::Index k = 0; k < mask.size(); ++k)
          mask.data()[k] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        y.array() *= mask.array();
      }
    } else if (cache) {
      cache->activations.push_back(Mat());
    }
    if (cache) cache->masks.push_back(std::move(mask));
    h = std::move(y);
  }
  return h;
}

Mat mlp_backward(const Parameters& params, const Mlp& mlp, const MlpCache& cache,
                 const Mat& grad_y, Gradients& grads) {
  Mat g = grad_y;
  for (std::size_t i = mlp.layers.size(); i-- > 0;) {
    const bool activated = mlp.activate_last || i + 1 < mlp.layers.size();
    if (activated) {
      if (cache.masks[i].size() > 0) g.array() *= cache.masks[i].array();
      activation_backward(g, cache.activations[i], mlp.activation);
    }
    g = dense_backward(params, mlp.layers[i], cache.inputs[i], g, grads);
  }
  return g;
}

Vec mlp_forward(const Parameters& params, const Mlp& mlp, const Vec& x, bool train, Rng* rng) {
  if (mlp.layers.empty()) return x;
  if (x.size() != mlp.in())
    throw InvalidArgument("mlp_forward: input dimension " + std::to_string(x.size()) +
                          " does not match first layer width " + std::to_string(mlp.in()));
  Mat row = x.transpose();
  Mat y = mlp_forward(params, mlp, row, train, rng, nullptr);
  return y.row(0).transpose();
}

Gru make_gru(Parameters& params, const std::string& name, Eigen::Index in, Eigen::Index hidden,
             Rng& rng) {
  Gru g;
  g.in = in;
  g.hidden = hidden;
  Mat w(3 * hidden, in);
  Mat u(3 * hidden, hidden);
  // Each gate block gets its own Glorot scale.
  for (int k = 0; k < 3; ++k) {
    w.middleRows(k * hidden, hidden) = glorot_uniform(hidden, in, rng);
    u.middleRows(k * hidden, hidden) = glorot_uniform(hidden, hidden, rng);
  }
  g.w = params.add(name + ".w", std::move(w));
  g.u = params.add(name + ".u", std::move(u));
  g.b = params.add(name + ".b", Mat::Zero(1, 3 * hidden));
  return g;
}

Mat gru_forward(const Parameters& params, const Gru& gru, const Mat& x, GruCache* cache) {
  const Eigen::Index steps = x.rows();
  const Eigen::Index hd = gru.hidden;
  if (x.cols() != gru.in) throw InvalidArgument("gru_forward: input width mismatch");
  const Mat& u = params.value(gru.u);
  Mat a = x * params.value(gru.w).transpose();
  a.rowwise() += params.value(gru.b).row(0);

  Mat z(steps, hd), r(steps, hd), n(steps, hd), h(steps, hd);
  RowVec hprev = RowVec::Zero(hd);
  for (Eigen::Index t = 0; t < steps; ++t) {
    RowVec gates = a.row(t).head(2 * hd) + hprev * u.topRows(2 * hd).transpose();
    for (Eigen::Index k = 0; k < 2 * hd; ++k) gates[k] = sigmoid(gates[k]);
    z.row(t) = gates.head(hd);
    r.row(t) = gates.tail(hd);
    RowVec rh = r.row(t).cwiseProduct(hprev);
    RowVec cand = a.row(t).tail(hd) + rh * u.bottomRows(hd).transpose();
    n.row(t) = cand.array().tanh();
    h.row(t) = (1.0 - z.row(t).array()) * hprev.array() + z.row(t).array() * n.row(t).array();
    hprev = h.row(t);
  }
  if (cache) {
    cache->x = x;
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->n = std::move(n);
    cache->h = h;
  }
  return h;
}

Mat gru_backward(const Parameters& params, const Gru& gru, const GruCache& c, const Mat& grad_h,
                 Gradients& grads) {
  const Eigen::Index steps = c.x.rows();
  const Eigen::Index hd = gru.hidden;
  const Mat& u = params.value(gru.u);
  Mat& du = grads[gru.u];
  Mat da(steps, 3 * hd);
  RowVec dh_next = RowVec::Zero(hd);
  for (Eigen::Index t = steps; t-- > 0;) {
    const RowVec hprev = t > 0 ? RowVec(c.h.row(t - 1)) : RowVec::Zero(hd);
    const auto z = c.z.row(t).array();
    const auto r = c.r.row(t).array();
    const auto n = c.n.row(t).array();
    const RowVec dh = grad_h.row(t) + dh_next;

    RowVec dn = dh.array() * z;
    RowVec dz = dh.array() * (n - hprev.array());
    RowVec dhprev = dh.array() * (1.0 - z);

    RowVec dan = dn.array() * (1.0 - n.square());
    const RowVec rh = r * hprev.array();
    du.bottomRows(hd).noalias() += dan.transpose() * rh;
    const RowVec drh = dan * u.bottomRows(hd);
    RowVec dr = drh.array() * hprev.array();
    dhprev.array() += drh.array() * r;

    RowVec dazr(2 * hd);
    dazr.head(hd) = dz.array() * z * (1.0 - z);
    dazr.tail(hd) = dr.array() * r * (1.0 - r);
    du.topRows(2 * hd).noalias() += dazr.transpose() * hprev;
    dhprev.noalias() += dazr * u.topRows(2 * hd);

    da.row(t).head(2 * hd) = dazr;
    da.row(t).tail(hd) = dan;
    dh_next = dhprev;
  }
  grads[gru.w].noalias() += da.transpose() * c.x;
  grads[gru.b].row(0) += da.colwise().sum();
  return da * params.value(gru.w);
}

BiGru make_bigru(Parameters& params, const std::string& name, Eigen::Index in,
                 Eigen::Index hidden, Rng& rng) {
  BiGru b;
  b.forward = make_gru(params, name + ".fwd", in, hidden, rng);
  b.backward = make_gru(params, name + ".bwd", in, hidden, rng);
  return b;
}

Mat bigru_forward(const Parameters& params, const BiGru& rnn, const Mat& x, BiGruCache* cache) {
  if (x.rows() == 0) throw InvalidArgument("bigru_forward: empty sequence");
  const Eigen::Index hd = rnn.hidden();
  Mat reversed = x.colwise().reverse();
  Mat hf = gru_forward(params, rnn.forward, x, cache ? &cache->forward : nullptr);
  Mat hb = gru_forward(params, rnn.backward, reversed, cache ? &cache->backward : nullptr);
  Mat out(x.rows(), 2 * hd);
  out.leftCols(hd) = hf;
  out.rightCols(hd) = hb.colwise().reverse();
  return out;
}

Mat bigru_backward(const Parameters& params, const BiGru& rnn, const BiGruCache& cache,
                   const Mat& grad_out, Gradients& grads) {
  const Eigen::Index hd = rnn.hidden();
  Mat dx = gru_backward(params, rnn.forward, cache.forward, grad_out.leftCols(hd), grads);
  Mat dhb = grad_out.rightCols(hd).colwise().reverse();
  Mat dxr = gru_backward(params, rnn.backward, cache.backward, dhb, grads);
  dx += dxr.colwise().reverse();
  return dx;
}

}  // namespace skillrec::nk
