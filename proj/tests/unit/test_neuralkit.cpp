#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "helpers.hpp"
#include "skillrec/error.hpp"
#include "skillrec/neuralkit/featurizer.hpp"
#include "skillrec/neuralkit/gradcheck.hpp"
#include "skillrec/neuralkit/layers.hpp"
#include "skillrec/neuralkit/losses.hpp"
#include "skillrec/neuralkit/model_file.hpp"
#include "skillrec/neuralkit/optimizer.hpp"
#include "skillrec/neuralkit/trainer.hpp"
#include "skillrec/rng.hpp"

using namespace skillrec;
using namespace skillrec::nk;

namespace {

// Independent FNV-1a and Fibonacci reduction for the featurizer oracle.
std::uint32_t reference_hash(const std::string& key, std::uint64_t seed, int bits) {
  std::uint64_t h = 14695981039346656037ULL ^ seed;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<std::uint32_t>((h * 11400714819323198485ULL) >> (64 - bits));
}

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Weighted sum of outputs; a non-symmetric target makes every gradient entry informative.
double probe_loss(const Mat& y, const Mat& w, Mat* grad) {
  if (grad) *grad = w;
  return (y.array() * w.array()).sum();
}

}  // namespace

TEST_SUITE("neuralkit") {
  TEST_CASE("featurizer: empty text and a single repeated token") {
    FeaturizerConfig cfg;
    CHECK(featurize("", cfg).empty());
    FeaturizerConfig words{{1}, {}, 18, cfg.hash_seed};
    const auto f = featurize("thunder thunder", words);
    REQUIRE(f.size() == 1);
    CHECK(f.entries[0].weight == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(f.dim == (1u << 18));
  }

  TEST_CASE("featurizer: index set matches a hand-enumerated reference") {
    FeaturizerConfig cfg{{1}, {3}, 18, 0x1234};
    const std::vector<std::string> keys{
        "w1:play", "w1:thunder", "w1:sound", "c3:<pl", "c3:pla", "c3:lay", "c3:ay>", "c3:<th", "c3:thu",
        "c3:hun", "c3:und", "c3:nde", "c3:der", "c3:er>", "c3:<so", "c3:sou", "c3:oun", "c3:und", "c3:nd>"};
    CHECK(enumerate_ngrams("play thunder sound", cfg) == keys);
    std::map<std::uint32_t, double> counts;
    for (const auto& k : keys) counts[reference_hash(k, 0x1234, 18)] += 1.0;
    double norm = 0.0;
    for (auto& [i, c] : counts) norm += c * c;
    norm = std::sqrt(norm);
    const auto f = featurize("play thunder sound", cfg);
    REQUIRE(f.size() == counts.size());
    std::size_t pos = 0;
    for (auto& [i, c] : counts) {
      CHECK(f.entries[pos].index == i);
      CHECK(f.entries[pos].weight == doctest::Approx(c / norm).epsilon(1e-14));
      ++pos;
    }
  }

  TEST_CASE("featurizer: sorted unique indices, unit norm, bigram keys") {
    FeaturizerConfig cfg{{1, 2}, {3}, 12, 9};
    const auto keys = enumerate_ngrams("a b", cfg);
    CHECK(std::find(keys.begin(), keys.end(), std::string("w2:a\x1f" "b")) != keys.end());
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      std::string text;
      for (int w = 0; w < 6; ++w) text += std::string(1 + rng.below(4), static_cast<char>('a' + rng.below(5))) + " ";
      const auto f = featurize(text, cfg);
      double sq = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        CHECK(f.entries[i].index < f.dim);
        if (i) CHECK(f.entries[i - 1].index < f.entries[i].index);
        sq += f.entries[i].weight * f.entries[i].weight;
      }
      CHECK(sq == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(dot(f, f) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(featurize("x", FeaturizerConfig{{1}, {}, 4, 0}), InvalidArgument);
  }

  TEST_CASE("losses: closed forms") {
    CHECK(loss_ova(Vec::Zero(3), Vec{{1.0, 0.0, 0.0}}) == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(loss_ova(Vec{{20.0, -20.0, -20.0}}, Vec{{1.0, 0.0, 0.0}}) < 1e-7);
    CHECK(loss_multiclass(Vec::Zero(4), Vec{{0.0, 1.0, 0.0, 0.0}}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(loss_multiclass(Vec{{10.0, 0.0, 0.0, 0.0}}, Vec{{1.0, 0.0, 0.0, 0.0}}) ==
          doctest::Approx(-std::log(std::exp(10.0) / (std::exp(10.0) + 3.0))).epsilon(1e-9));
    const Vec o{{0.3, -1.2, 2.0, 0.1}};
    const Vec y{{0.0, 0.0, 1.0, 0.0}};
    CHECK(std::abs(loss_multiclass(o, y) - loss_multiclass((o.array() + 100.0).matrix(), y)) < 1e-6);

    Rng rng(11);
    Vec ro(8), ry(8);
    for (int i = 0; i < 8; ++i) {
      ro[i] = rng.normal(0.0, 3.0);
      ry[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    double ref = 0.0;
    for (int i = 0; i < 8; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-ro[i]));
      ref += -(ry[i] * std::log(s) + (1.0 - ry[i]) * std::log(1.0 - s));
    }
    CHECK(loss_ova(ro, ry) == doctest::Approx(ref).epsilon(1e-9));

    CHECK_THROWS_AS(loss_multiclass(Vec::Zero(3), Vec{{1.0, 1.0, 0.0}}), InvalidArgument);
    CHECK_THROWS_AS(loss_ova(Vec::Zero(3), Vec{{0.5, 0.0, 0.0}}), InvalidArgument);
    CHECK_THROWS_AS(loss_ova(Vec::Zero(3), Vec::Zero(2)), InvalidArgument);
  }

  TEST_CASE("losses: softmax sums to one and is overflow safe") {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
      Vec o(7);
      for (int i = 0; i < 7; ++i) o[i] = rng.normal(0.0, 50.0);
      const Vec p = softmax(o);
      CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(p.allFinite());
    }
    CHECK(softplus(1000.0) == doctest::Approx(1000.0));
    CHECK(softplus(-1000.0) >= 0.0);
  }

  TEST_CASE("losses: masked binary cross-entropy") {
    const Vec half{{0.5, 0.5}};
    CHECK(binary_cross_entropy(half, Vec{{1.0, 0.0}}, Vec::Ones(2)) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(binary_cross_entropy(Vec{{0.6}}, Vec{{0.6}}, Vec::Ones(1)) ==
          doctest::Approx(-(0.6 * std::log(0.6) + 0.4 * std::log(0.4))).epsilon(1e-12));
    CHECK(binary_cross_entropy(half, Vec{{1.0, 0.0}}, Vec{{1.0, 0.0}}) ==
          doctest::Approx(binary_cross_entropy(half, Vec{{1.0, 1.0}}, Vec{{1.0, 0.0}})));
    CHECK(std::isfinite(binary_cross_entropy(Vec{{0.0, 1.0}}, Vec{{1.0, 0.0}}, Vec::Ones(2))));
    CHECK_THROWS_AS(binary_cross_entropy(Vec{{1.5}}, Vec{{1.0}}, Vec::Ones(1)), InvalidArgument);
  }

  TEST_CASE("mlp: zero weights, relu identity, matrix oracle, eval dropout") {
    Rng rng(1);
    Parameters p;
    auto zero = make_mlp(p, "z", 3, {4, 2}, Activation::Relu, false, 0.0, rng);
    for (const auto& t : zero.layers) {
      p.value(t.weight).setZero();
      p.value(t.bias).setZero();
    }
    CHECK(mlp_forward(p, zero, Vec{{1.0, -2.0, 3.0}}, false, nullptr).isZero());

    auto ident = make_mlp(p, "i", 2, {2}, Activation::Relu, true, 0.0, rng);
    p.value(ident.layers[0].weight) = Mat::Identity(2, 2);
    p.value(ident.layers[0].bias).setZero();
    const Vec out = mlp_forward(p, ident, Vec{{-1.0, 2.0}}, false, nullptr);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 2.0);

    auto net = make_mlp(p, "n", 5, {6, 3}, Activation::Tanh, false, 0.5, rng);
    Vec x(5);
    for (int i = 0; i < 5; ++i) x[i] = rng.normal();
    const Mat& w0 = p.value(net.layers[0].weight);
    const Mat& b0 = p.value(net.layers[0].bias);
    const Mat& w1 = p.value(net.layers[1].weight);
    const Mat& b1 = p.value(net.layers[1].bias);
    Vec h(6);
    for (int i = 0; i < 6; ++i) {
      double s = b0(0, i);
      for (int j = 0; j < 5; ++j) s += w0(i, j) * x[j];
      h[i] = std::tanh(s);
    }
    const Vec got = mlp_forward(p, net, x, false, nullptr);
    for (int i = 0; i < 3; ++i) {
      double s = b1(0, i);
      for (int j = 0; j < 6; ++j) s += w1(i, j) * h[j];
      CHECK(got[i] == doctest::Approx(s).epsilon(1e-12));
    }
    // Eval mode ignores dropout entirely.
    CHECK(mlp_forward(p, net, x, false, &rng) == got);
    CHECK_THROWS_AS(mlp_forward(p, net, Vec::Zero(4), false, nullptr), InvalidArgument);
  }

  TEST_CASE("grad check: quadratic is exact") {
    Parameters p;
    Rng rng(2);
    const auto id = p.add("w", random_mat(3, 4, rng));
    const LossFunction f = [&](const Parameters& ps, Gradients* g) {
      const Mat& w = ps.value(id);
      if (g) (*g)[id] += 2.0 * w;
      return w.squaredNorm();
    };
    const auto r = grad_check(f, p, 1e-5);
    CHECK(r.passed());
    CHECK(r.max_relative_error < 1e-5);
    CHECK(r.entries_checked == 12);
  }

  TEST_CASE("grad check: dense, mlp and embedding bag") {
    Rng rng(4);
    Parameters p;
    const auto table = p.add("emb", normal_fill(1 << 10, 5, 0.3, rng), true);
    auto mlp = make_mlp(p, "mlp", 5, {7, 3}, Activation::Tanh, false, 0.0, rng);
    const Mat probe = random_mat(2, 3, rng);
    FeaturizerConfig fc{{1}, {3}, 10, 1};
    const std::vector<SparseFeatures> inputs{featurize("rain storm", fc), featurize("gentle thunder", fc)};
    const LossFunction f = [&](const Parameters& ps, Gradients* g) {
      Mat x(2, 5);
      for (int i = 0; i < 2; ++i) x.row(i) = embed_bag_forward(ps.value(table), inputs[i]);
      MlpCache cache;
      const Mat y = mlp_forward(ps, mlp, x, false, nullptr, &cache);
      Mat dy;
      const double loss = probe_loss(y, probe, g ? &dy : nullptr);
      if (g) {
        const Mat dx = mlp_backward(ps, mlp, cache, dy, *g);
        for (int i = 0; i < 2; ++i) embed_bag_backward(table, inputs[i], dx.row(i), *g);
      }
      return loss;
    };
    const auto r = grad_check(f, p, 1e-3);
    INFO("worst tensor " << r.worst_tensor << " rel " << r.max_relative_error);
    CHECK(r.passed());
  }

  TEST_CASE("grad check: bidirectional GRU") {
    Rng rng(8);
    Parameters p;
    auto rnn = make_bigru(p, "rnn", 4, 3, rng);
    const Mat x = random_mat(5, 4, rng);
    const Mat probe = random_mat(5, 6, rng);
    const LossFunction f = [&](const Parameters& ps, Gradients* g) {
      BiGruCache cache;
      const Mat y = bigru_forward(ps, rnn, x, &cache);
      Mat dy;
      const double loss = probe_loss(y, probe, g ? &dy : nullptr);
      if (g) bigru_backward(ps, rnn, cache, dy, *g);
      return loss;
    };
    const auto r = grad_check(f, p, 1e-3);
    INFO("worst tensor " << r.worst_tensor << " rel " << r.max_relative_error);
    CHECK(r.passed());
  }

  TEST_CASE("bigru: degenerate and directional properties") {
    Rng rng(9);
    Parameters p;
    auto rnn = make_bigru(p, "rnn", 3, 2, rng);
    const Mat one = random_mat(1, 3, rng);
    const Mat y1 = bigru_forward(p, rnn, one, nullptr);
    const Mat f1 = gru_forward(p, rnn.forward, one, nullptr);
    const Mat b1 = gru_forward(p, rnn.backward, one, nullptr);
    CHECK(y1.leftCols(2).isApprox(f1));
    CHECK(y1.rightCols(2).isApprox(b1));

    const Mat x = random_mat(4, 3, rng);
    const Mat y = bigru_forward(p, rnn, x, nullptr);
    const Mat xr = x.colwise().reverse();
    const BiGru swapped{rnn.backward, rnn.forward};
    const Mat yr = bigru_forward(p, swapped, xr, nullptr);
    for (int t = 0; t < 4; ++t) {
      CHECK((yr.row(3 - t).leftCols(2) - y.row(t).rightCols(2)).norm() < 1e-12);
      CHECK((yr.row(3 - t).rightCols(2) - y.row(t).leftCols(2)).norm() < 1e-12);
    }

    Mat x3 = random_mat(3, 3, rng);
    const Mat before = bigru_forward(p, rnn, x3, nullptr);
    x3(2, 0) += 0.5;
    const Mat after = bigru_forward(p, rnn, x3, nullptr);
    CHECK((before.row(0) - after.row(0)).norm() > 1e-6);
    CHECK_THROWS_AS(bigru_forward(p, rnn, Mat(0, 3), nullptr), InvalidArgument);
  }

  TEST_CASE("adam: zero gradient, first step size, scalar convergence") {
    Parameters p;
    const auto w = p.add("w", Mat::Constant(1, 1, 1.0));
    Gradients g(p);
    Adam zero(p, {0.1});
    g.zero();
    zero.step(p, g);
    CHECK(p.value(w)(0, 0) == 1.0);

    Adam adam(p, {0.1});
    g.zero();
    g[w](0, 0) = 1.0;
    adam.step(p, g);
    CHECK(p.value(w)(0, 0) == doctest::Approx(0.9).epsilon(1e-6));

    p.value(w)(0, 0) = 1.0;
    Adam opt(p, {0.1});
    for (int i = 0; i < 100; ++i) {
      g.zero();
      g[w](0, 0) = 2.0 * p.value(w)(0, 0);
      opt.step(p, g);
    }
    CHECK(std::abs(p.value(w)(0, 0)) < 0.05);
  }

  TEST_CASE("adam: lazy rows and non-finite gradients") {
    Parameters p;
    const auto t = p.add("table", Mat::Ones(4, 2), true);
    Gradients g(p);
    Adam opt(p, {0.1});
    g.zero();
    g.row(t, 2).setConstant(1.0);
    opt.step(p, g);
    CHECK(p.value(t).row(0) == Mat::Ones(1, 2));
    CHECK(p.value(t)(2, 0) < 1.0);
    g.zero();
    CHECK(g.touched_rows(t).empty());
    g.row(t, 1)(0, 0) = std::nan("");
    const Mat snapshot = p.value(t);
    CHECK_THROWS_AS(opt.step(p, g), Error);
    CHECK(p.value(t) == snapshot);
  }

  TEST_CASE("fit is deterministic and early stopping restores the best epoch") {
    auto run = [](std::vector<double>* val_curve) {
      Rng rng(3);
      Parameters p;
      const auto w = p.add("w", random_mat(1, 3, rng));
      std::vector<Vec> xs;
      std::vector<double> ys;
      Rng d(17);
      for (int i = 0; i < 64; ++i) {
        Vec x(3);
        for (int j = 0; j < 3; ++j) x[j] = d.normal();
        xs.push_back(x);
        ys.push_back(x[0] - 2.0 * x[2]);
      }
      const BatchLoss bl = [&](std::span<const std::size_t> batch, Gradients& g, Rng&) {
        double loss = 0.0;
        for (auto i : batch) {
          const double e = (p.value(w) * xs[i])(0) - ys[i];
          loss += e * e;
          g[w] += 2.0 * e * xs[i].transpose();
        }
        return loss;
      };
      const ValidationLoss vl = [&] {
        double loss = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
          const double e = (p.value(w) * xs[i])(0) - ys[i];
          loss += e * e;
        }
        return loss / static_cast<double>(xs.size());
      };
      TrainConfig cfg;
      cfg.learning_rate = 0.05;
      cfg.batch_size = 8;
      cfg.max_epochs = 30;
      const auto report = fit(p, xs.size(), bl, vl, cfg);
      if (val_curve) *val_curve = report.validation_loss;
      CHECK(vl() == doctest::Approx(report.best_validation_loss));
      return Mat(p.value(w));
    };
    std::vector<double> curve;
    const Mat a = run(&curve);
    const Mat b = run(nullptr);
    CHECK(a == b);
    CHECK(curve.back() < curve.front());
    TrainConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  }

  TEST_CASE("model file round trip in float32") {
    testutil::TempDir dir("mf");
    Rng rng(1);
    Parameters p;
    p.add("a", random_mat(3, 2, rng));
    p.add("b.c", random_mat(1, 5, rng), true);
    save_model(dir / "m.bin", p, {{"kind", "test"}});
    CHECK(load_sidecar(dir / "m.bin").at("kind") == "test");
    Parameters q;
    q.add("a", Mat::Zero(3, 2));
    q.add("b.c", Mat::Zero(1, 5), true);
    load_tensors(dir / "m.bin", q);
    for (std::size_t i = 0; i < p.size(); ++i)
      CHECK((p.value(i).cast<float>().cast<double>() - q.value(i)).norm() == 0.0);
    const auto bytes = read_file(dir / "m.bin");
    CHECK(bytes.substr(0, 4) == "SKM1");

    Parameters wrong;
    wrong.add("a", Mat::Zero(2, 2));
    CHECK_THROWS_AS(load_tensors(dir / "m.bin", wrong), Error);
    testutil::spit(dir / "bad.bin", "SKM1\x01");
    CHECK_THROWS_AS(load_tensors(dir / "bad.bin", q), Error);
  }
}
