#include "fiml/verify.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>

#include "fiml/base_learner.hpp"
#include "fiml/data.hpp"
#include "fiml/embedding.hpp"
#include "fiml/meta.hpp"
#include "fiml/objective.hpp"
#include "fiml/rng.hpp"

namespace fiml::verify {

namespace {

using ad::Var;
using Clock = std::chrono::steady_clock;
using Mat = Eigen::MatrixXd;

double norm(const Tensor& t) {
  double s = 0;
  for (real v : t.data()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

Tensor random_tensor(CounterRng& rng, Shape shape, double scale) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& x : t.mutable_data()) x = static_cast<real>(scale * rng.normal());
  return t;
}

double log_uniform(CounterRng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

Psi random_psi(CounterRng& rng, std::size_t locations, bool transductive) {
  Psi psi = Psi::baseline(locations);
  psi.set_value(PsiField::LPos, static_cast<real>(rng.uniform(0.5, 2.0)));
  psi.set_value(PsiField::LNeg, static_cast<real>(rng.uniform(-2.0, 0.0)));
  psi.set_value(PsiField::APos, static_cast<real>(rng.uniform(0.5, 2.0)));
  psi.set_value(PsiField::ANeg, static_cast<real>(rng.uniform(0.2, 2.0)));
  psi.set_value(PsiField::OPos, static_cast<real>(rng.uniform(0.5, 1.5)));
  psi.set_value(PsiField::ONeg, static_cast<real>(rng.uniform(0.5, 1.5)));
  psi.set_value(PsiField::LambdaReg, static_cast<real>(log_uniform(rng, 1e-3, 1.0)));
  psi.set_value(PsiField::LambdaTran, static_cast<real>(log_uniform(rng, 1e-2, 1.0)));
  psi.set_value(PsiField::Beta, static_cast<real>(rng.uniform(0.5, 2.0)));
  for (auto& v : psi.fusion) v = static_cast<real>(rng.uniform(0.1, 1.0));
  psi.transductive = transductive;
  return psi;
}

// Embedded episode blocks from the desk gaussian family and a random
// embedding; the blocks are plain tensors from here on.
struct Instance {
  Tensor support;  // [N, L, F]
  Tensor query;    // [Q, L, F]
  std::vector<std::size_t> labels;
  std::size_t ways = 0;
  bool dense = true;
  objective::TransductiveMode mode = objective::TransductiveMode::Fused;
  Psi psi;
};

class Desk {
 public:
  explicit Desk(std::uint64_t seed) {
    data::FamilyConfig fc;
    family_ = data::TaskFamily::generate(fc, seed);
    cfg_.input_dim = fc.dim;
    phi_ = embed::init_params(cfg_, CounterRng::derive_key(seed, {streams::kCheck, 1}));
  }

  const embed::EmbeddingConfig& embedding() const { return cfg_; }

  Tensor embed_block(const Tensor& x) const {
    ad::Tape tape;
    std::vector<Var> phi;
    for (const auto& t : phi_) phi.push_back(tape.constant(t));
    return embed::embed(cfg_, phi, tape.constant(x)).value();
  }

  Instance draw(CounterRng& rng, bool transductive, std::size_t ways = 0, std::size_t shots = 0,
                std::size_t queries = 0) const {
    if (ways == 0) ways = 2 + rng.below(4);
    if (shots == 0) shots = 1 + rng.below(3);
    if (queries == 0) queries = 2 + rng.below(4);
    const data::Episode ep = data::sample_episode(family_, data::Split::Train, ways, shots, queries, rng());
    Instance in;
    in.support = embed_block(ep.support);
    in.query = embed_block(ep.query);
    in.labels = ep.support_labels;
    in.ways = ways;
    in.dense = rng.below(4) != 0;
    in.mode = rng.below(2) ? objective::TransductiveMode::Fused : objective::TransductiveMode::PerLocation;
    in.psi = random_psi(rng, cfg_.locations, transductive);
    return in;
  }

 private:
  data::TaskFamily family_;
  embed::EmbeddingConfig cfg_;
  std::vector<Tensor> phi_;
};

struct Bound {
  objective::EpisodeTensors et;
  PsiVars psi;
};

Bound bind_instance(ad::Tape& tape, const Instance& in) {
  Bound b;
  b.et = objective::make_episode_tensors(tape.constant(in.support), in.labels, tape.constant(in.query), in.ways,
                                         in.dense, in.mode);
  b.psi = bind_psi(tape, in.psi, PsiMask::none());
  return b;
}

std::size_t feature_dim(const Instance& in) { return in.support.dim(2); }

double base_loss_at(const Instance& in, const Tensor& theta) {
  ad::Tape tape;
  Bound b = bind_instance(tape, in);
  return static_cast<double>(objective::base_loss(tape.constant(theta), b.et, b.psi).item());
}

Tensor grad_base_at(const Instance& in, const Tensor& theta) {
  ad::Tape tape;
  Bound b = bind_instance(tape, in);
  return objective::grad_base(tape.constant(theta), b.et, b.psi).value();
}

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

 private:
  Clock::time_point start_ = Clock::now();
};

CheckResult finish(CheckResult r, const Timer& t) {
  r.seconds = t.seconds();
  if (r.time_limit > 0 && r.seconds >= r.time_limit) {
    r.passed = false;
    r.detail += (r.detail.empty() ? "" : "; ") + std::string("time limit exceeded");
  }
  return r;
}

// Dense matrix of a [rows, cols] tensor.
Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = static_cast<double>(t.at(i, j));
  return m;
}

Eigen::VectorXd vec(const Tensor& t) {
  Eigen::VectorXd v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v(i) = static_cast<double>(t[i]);
  return v;
}

}  // namespace

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) throw ShapeError("relative_error: shape mismatch");
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    diff += d * d;
  }
  return std::sqrt(diff) / std::max({norm(a), norm(b), floor});
}

std::vector<Tensor> finite_difference(const std::function<double(const std::vector<Tensor>&)>& f,
                                      std::vector<Tensor> x, double h) {
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < x.size(); ++t) {
    Tensor g = Tensor::zeros(x[t].shape());
    for (std::size_t i = 0; i < x[t].size(); ++i) {
      const real orig = x[t][i];
      x[t].mutable_data()[i] = orig + static_cast<real>(h);
      const double up = f(x);
      x[t].mutable_data()[i] = orig - static_cast<real>(h);
      const double down = f(x);
      x[t].mutable_data()[i] = orig;
      g.mutable_data()[i] = static_cast<real>((up - down) / (2 * h));
    }
    out.push_back(std::move(g));
  }
  return out;
}

CheckResult check_primitives(const SuiteConfig& config) {
  Timer timer;
  CheckResult r;
  r.name = "autodiff primitives vs finite differences";
  r.threshold = 1e-7;
  CounterRng rng = CounterRng::stream(config.seed, {streams::kCheck, 10});

  using Op = std::function<Var(const std::vector<Var>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Op op;
    bool positive = false;
  };
  const std::vector<Case> cases = {
      {"add", {{3, 4}, {3, 4}}, [](auto& v) { return v[0] + v[1]; }},
      {"add-scalar", {{3, 4}, {}}, [](auto& v) { return v[0] + v[1]; }},
      {"sub", {{3, 4}, {3, 4}}, [](auto& v) { return v[0] - v[1]; }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& v) { return v[0] * v[1]; }},
      {"mul-scalar", {{}, {3, 4}}, [](auto& v) { return v[0] * v[1]; }},
      {"div", {{3, 4}, {3, 4}}, [](auto& v) { return v[0] / v[1]; }, true},
      {"neg", {{5}}, [](auto& v) { return -v[0]; }},
      {"scale", {{5}}, [](auto& v) { return ad::scale(v[0], real(2.5)); }},
      {"shift", {{5}}, [](auto& v) { return ad::shift(v[0], real(-0.5)); }},
      {"square", {{2, 3}}, [](auto& v) { return ad::square(v[0]); }},
      {"exp", {{2, 3}}, [](auto& v) { return ad::exp(v[0]); }},
      {"log", {{2, 3}}, [](auto& v) { return ad::log(v[0]); }, true},
      {"relu", {{2, 3}}, [](auto& v) { return ad::relu(v[0]); }},
      {"matmul", {{3, 4}, {4, 2}}, [](auto& v) { return ad::matmul(v[0], v[1]); }},
      {"transpose", {{3, 4}}, [](auto& v) { return ad::transpose(v[0]); }},
      {"reshape", {{3, 4}}, [](auto& v) { return ad::reshape(v[0], {2, 6}); }},
      {"sum", {{3, 4}}, [](auto& v) { return ad::sum(v[0]); }},
      {"sum-axis0", {{3, 4}}, [](auto& v) { return ad::sum(v[0], 0); }},
      {"sum-axis1", {{2, 3, 4}}, [](auto& v) { return ad::sum(v[0], 1); }},
      {"mean", {{3, 4}}, [](auto& v) { return ad::mean(v[0]); }},
      {"mean-axis1", {{2, 3, 4}}, [](auto& v) { return ad::mean(v[0], 1); }},
      {"sum_squares", {{3, 4}}, [](auto& v) { return ad::sum_squares(v[0]); }},
      {"logsumexp", {{3, 5}}, [](auto& v) { return ad::logsumexp(v[0]); }},
      {"softmax", {{3, 5}}, [](auto& v) { return ad::softmax(v[0]); }},
      {"repeat_last", {{3}}, [](auto& v) { return ad::repeat_last(v[0], 4); }},
      {"repeat_first", {{3}}, [](auto& v) { return ad::repeat_first(v[0], 4); }},
      {"contract_axis1", {{2, 3, 4}, {3}}, [](auto& v) { return ad::contract_axis1(v[0], v[1]); }},
  };

  for (const auto& c : cases) {
    std::vector<Tensor> x;
    for (const auto& s : c.shapes) {
      Tensor t = random_tensor(rng, s, 1.0);
      if (c.positive) {
        for (auto& v : t.mutable_data()) v = std::abs(v) + real(0.5);
      } else if (std::string(c.name) == "relu") {
        // keep away from the kink
        for (auto& v : t.mutable_data()) v += v >= 0 ? real(0.1) : real(-0.1);
      }
      x.push_back(std::move(t));
    }
    // Projection onto a fixed random direction turns any output into a scalar.
    ad::Tape probe;
    std::vector<Var> pv;
    for (const auto& t : x) pv.push_back(probe.constant(t));
    const Tensor w = random_tensor(rng, c.op(pv).shape(), 1.0);

    auto f = [&](const std::vector<Tensor>& in) {
      ad::Tape tape;
      std::vector<Var> v;
      for (const auto& t : in) v.push_back(tape.constant(t));
      return dot(c.op(v).value(), w);
    };
    ad::Tape tape;
    std::vector<Var> params;
    for (const auto& t : x) params.push_back(tape.parameter(t));
    Var out = ad::sum(c.op(params) * tape.constant(w));
    const ad::Gradients grads = tape.backward(out);
    const auto fd = finite_difference(f, x, 1e-6);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = relative_error(grads[params[i]], fd[i], 1e-8);
      if (e > r.worst) {
        r.worst = e;
        r.detail = std::string("worst op: ") + c.name;
      }
    }
    ++r.cases;
  }
  r.passed = r.worst < r.threshold;
  return finish(r, timer);
}

CheckResult check_grad_base(const SuiteConfig& config) {
  Timer timer;
  CheckResult r;
  r.name = "grad_base vs central differences of base_loss";
  r.threshold = 1e-6;
  r.time_limit = 60;
  const Desk desk(config.seed);
  CounterRng rng = CounterRng::stream(config.seed, {streams::kCheck, 1});
  for (std::size_t d = 0; d < config.draws; ++d) {
    const Instance in = desk.draw(rng, rng.below(3) != 0);
    const Tensor theta = random_tensor(rng, {feature_dim(in), in.ways}, 0.5);
    const Tensor g = grad_base_at(in, theta);
    const auto fd = finite_difference([&](const std::vector<Tensor>& x) { return base_loss_at(in, x[0]); },
                                      {theta}, 1e-5);
    r.worst = std::max(r.worst, relative_error(g, fd[0]));
    ++r.cases;
  }
  r.passed = r.worst < r.threshold;
  return finish(r, timer);
}

CheckResult check_meta_gradient(const SuiteConfig& config) {
  Timer timer;
  CheckResult r;
  r.name = "meta-gradient through 3 unrolled steps vs finite differences";
  r.threshold = 1e-4;
  r.time_limit = 120;
  constexpr std::size_t kSteps = 3;
  // A kink-free embedding, so finite differences are valid for every entry.
  data::FamilyConfig fc;
  const auto family = data::TaskFamily::generate(fc, config.seed);
  CounterRng rng = CounterRng::stream(config.seed, {streams::kCheck, 2});

  struct Variant {
    bool dense;
    learner::InitKind init;
    objective::TransductiveMode mode;
  };
  const Variant variants[] = {
      {true, learner::InitKind::Support, objective::TransductiveMode::Fused},
      {true, learner::InitKind::Support, objective::TransductiveMode::PerLocation},
      {false, learner::InitKind::Zero, objective::TransductiveMode::Fused},
  };
  std::string worst_field;
  for (const auto& v : variants) {
    meta::ModelSpec spec;
    spec.embedding.kind = embed::Kind::Linear;
    spec.embedding.input_dim = fc.dim;
    spec.embedding.features = 8;
    spec.dense = v.dense;
    spec.init = v.init;
    spec.transductive_mode = v.mode;
    const meta::Model model = meta::Model::create(spec, random_psi(rng, spec.embedding.locations, true),
                                                  PsiMask::all(), rng());
    std::vector<data::Episode> episodes;
    for (std::size_t t = 0; t < config.meta_draws; ++t) {
      episodes.push_back(data::sample_episode(family, data::Split::Train, 3, 2, 3, rng()));
    }

    ad::Tape tape;
    const meta::BoundModel bound = meta::bind(tape, model, true, PsiMask::all());
    const Var loss = meta::meta_loss(tape, model, bound, episodes, kSteps);
    const ad::Gradients grads = tape.backward(loss);
    meta::MetaGradient mg;
    for (const auto& p : bound.phi) mg.phi.push_back(grads[p]);
    mg.psi = psi_gradient(grads, bound.psi);
    const auto analytic = meta::flatten(mg);

    auto f = [&](const std::vector<Tensor>& params) {
      meta::Model m = model;
      meta::unflatten(m, params);
      ad::Tape t;
      return static_cast<double>(meta::meta_loss(t, m, meta::bind_frozen(t, m), episodes, kSteps).item());
    };
    const auto fd = finite_difference(f, meta::flatten(model), 1e-5);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      // Absolute floor for entries whose true gradient is ~0.
      const double e = relative_error(analytic[i], fd[i], 1e-6);
      if (e > r.worst) {
        r.worst = e;
        const std::size_t np = model.phi.size();
        worst_field = i < np ? "phi[" + std::to_string(i) + "]" : to_string(static_cast<PsiField>(i - np));
      }
      ++r.cases;
    }
  }
  r.detail = "worst entry: " + worst_field;
  r.passed = r.worst < r.threshold;
  return finish(r, timer);
}

CheckResult check_ridge_oracle(const SuiteConfig& config) {
  Timer timer;
  CheckResult r;
  r.name = "30 inner steps vs closed-form ridge minimum";
  r.threshold = 1e-4;
  constexpr std::size_t kSteps = 30;
  // Raw 64-dim inputs as pooled features (identity embedding, one location).
  data::FamilyConfig fc;
  fc.dim = 64;
  const auto family = data::TaskFamily::generate(fc, config.seed);
  CounterRng rng = CounterRng::stream(config.seed, {streams::kCheck, 3});
  double worst_loss = 0;
  for (std::size_t e = 0; e < config.ridge_episodes; ++e) {
    const data::Episode ep = data::sample_episode(family, data::Split::Train, 5, 1, 5, rng());
    const std::size_t n = ep.support_size();
    Instance in;
    in.support = ep.support.reshaped({n, 1, fc.dim});
    in.query = ep.query.reshaped({ep.query_size(), 1, fc.dim});
    in.labels = ep.support_labels;
    in.ways = 5;
    in.dense = false;
    in.psi = Psi::baseline(1);

    ad::Tape tape;
    Bound b = bind_instance(tape, in);
    const learner::InnerResult res = learner::run_inner(b.et, b.psi, learner::InitKind::Zero, kSteps);
    const double loss_d = static_cast<double>(res.trace.losses.back());

    const Mat x = to_mat(ep.support);
    Mat t = Mat::Constant(n, 5, -1.0);
    for (std::size_t j = 0; j < n; ++j) t(j, ep.support_labels[j]) = 1.0;
    const double lambda = static_cast<double>(in.psi.value(PsiField::LambdaReg));
    Mat a = x.transpose() * x;
    a.diagonal().array() += lambda;
    const Mat w_star = a.ldlt().solve(x.transpose() * t);
    const double loss_star = (x * w_star - t).squaredNorm() + lambda * w_star.squaredNorm();

    const Mat w_d = to_mat(res.theta.value());
    worst_loss = std::max(worst_loss, std::abs(loss_d - loss_star) / std::abs(loss_star));
    r.worst = std::max(r.worst, (w_d - w_star).norm() / w_star.norm());
    ++r.cases;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "worst relative loss gap %.3e (limit 1e-8)", worst_loss);
  r.detail = buf;
  r.passed = r.worst < r.threshold && worst_loss < 1e-8;
  return finish(r, timer);
}

CheckResult check_step_optimality(const SuiteConfig& config) {
  Timer timer;
  CheckResult r;
  r.name = "exact step length is a line minimizer";
  r.threshold = 1e-8;
  const Desk desk(config.seed);
  CounterRng rng = CounterRng::stream(config.seed, {streams::kCheck, 4});
  for (std::size_t d = 0; d < config.draws; ++d) {
    const Instance in = desk.draw(rng, false);
    ad::Tape tape;
    Bound b = bind_instance(tape, in);
    Var theta = tape.constant(random_tensor(rng, {feature_dim(in), in.ways}, 0.5));
    const auto lin = objective::linearize(theta, b.et, b.psi);
    Var g = objective::grad_base(lin, b.et, b.psi);
    Var alpha = objective::step_length(g, objective::quad_lsq(g, lin, b.et, b.psi),
                                       objective::quad_tran(g, lin, b.et, b.psi), b.psi);
    Var next = theta - alpha * g;
    const Tensor g_next = objective::grad_base(next, b.et, b.psi).value();
    // phi(alpha) = L(theta - alpha G), phi'(alpha) = -<G, grad L(theta - alpha G)>.
    const double slope = -dot(g.value(), g_next);
    const double g2 = dot(g.value(), g.value());
    r.worst = std::max(r.worst, std::abs(slope) / g2);
    ++r.cases;
  }

  // Isotropic quadratic: orthogonal features of equal norm, equal residual
  // weights. One step must land on the minimizer.
  double worst_iso = 0;
  for (std::size_t d = 0; d < 10; ++d) {
    const std::size_t k = 2 + rng.below(4);
    const real c = static_cast<real>(rng.uniform(0.5, 2.0));
    Instance in;
    in.support = Tensor::zeros({k, 1, k});
    for (std::size_t j = 0; j < k; ++j) {
      in.support.mutable_data()[j * k + j] = c;
      in.labels.push_back(j);
    }
    in.query = random_tensor(rng, {3, 1, k}, 1.0);
    in.ways = k;
    in.dense = false;
    in.psi = random_psi(rng, 1, false);
    in.psi.set_value(PsiField::ANeg, in.psi.value(PsiField::APos));
    const Tensor theta0 = random_tensor(rng, {k, k}, 1.0);

    ad::Tape tape;
    Bound b = bind_instance(tape, in);
    const auto res = learner::run_inner(b.et, b.psi, learner::InitKind::Zero, 1);
    // Start from theta0 instead of zero: take one step by hand.
    Var theta = tape.constant(theta0);
    const auto lin = objective::linearize(theta, b.et, b.psi);
    Var g = objective::grad_base(lin, b.et, b.psi);
    Var alpha = objective::step_length(g, objective::quad_lsq(g, lin, b.et, b.psi),
                                       objective::quad_tran(g, lin, b.et, b.psi), b.psi);
    const Tensor g1 = objective::grad_base(theta - alpha * g, b.et, b.psi).value();
    const Tensor g0 = grad_base_at(in, Tensor::zeros({k, k}));
    const Tensor g_zero_path = grad_base_at(in, res.theta.value());
    worst_iso = std::max({worst_iso, norm(g1) / norm(g.value()), norm(g_zero_path) / norm(g0)});
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "isotropic one-step residual gradient %.3e (limit 1e-10)", worst_iso);
  r.detail = buf;
  r.passed = r.worst < r.threshold && worst_iso < 1e-10;
  return finish(r, timer);
}

CheckResult check_entropy_identities(const SuiteConfig& config) {
  Timer timer;
  CheckResult r;
  r.name = "entropy identities";
  r.threshold = 1e-10;
  CounterRng rng = CounterRng::stream(config.seed, {streams::kCheck, 5});
  double worst_value = 0, worst_uniform = 0, worst_grad = 0, worst_zero_q = 0;
  std::size_t negative_q = 0, non_positive_q = 0;
  const Desk desk(config.seed);
  for (std::size_t d = 0; d < config.entropy_draws; ++d) {
    const std::size_t m = 1 + rng.below(6);
    const std::size_t k = 2 + rng.below(9);
    const double spread = rng.uniform(0.1, 10.0);
    const Tensor s = random_tensor(rng, {m, k}, spread);

    ad::Tape tape;
    const Tensor h = objective::entropy_loss(tape.constant(s)).value();
    for (std::size_t i = 0; i < m; ++i) {
      double mx = s.at(i, 0);
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(s.at(i, c)));
      double z = 0;
      for (std::size_t c = 0; c < k; ++c) z += std::exp(s.at(i, c) - mx);
      double naive = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double p = std::exp(s.at(i, c) - mx) / z;
        if (p > 0) naive -= p * std::log(p);
      }
      worst_value = std::max(worst_value, std::abs(naive - static_cast<double>(h[i])));
    }

    const Tensor uniform = Tensor::full({m, k}, static_cast<real>(rng.uniform(-20.0, 20.0)));
    Var u = tape.constant(uniform);
    const Tensor hu = objective::entropy_loss(u).value();
    for (std::size_t i = 0; i < m; ++i) {
      worst_uniform = std::max(worst_uniform, std::abs(static_cast<double>(hu[i]) - std::log(double(k))));
    }
    const Tensor gu = objective::entropy_logit_grad(u, ad::softmax(u)).value();
    for (real v : gu.data()) worst_grad = std::max(worst_grad, std::abs(static_cast<double>(v)));

    // quad_tran: non-negative for any direction, zero for directions whose
    // per-query scores are constant across classes.
    const Instance in = desk.draw(rng, true);
    ad::Tape t2;
    Bound b = bind_instance(t2, in);
    const std::size_t f = feature_dim(in);
    const auto lin = objective::linearize(t2.constant(random_tensor(rng, {f, in.ways}, 0.5)), b.et, b.psi);
    const Tensor g = random_tensor(rng, {f, in.ways}, 1.0);
    const double q = objective::quad_tran(t2.constant(g), lin, b.et, b.psi).item();
    if (q < 0) ++negative_q;
    if (!(q > 0)) ++non_positive_q;
    Tensor flat = Tensor::zeros({f, in.ways});
    for (std::size_t i = 0; i < f; ++i) {
      const real v = static_cast<real>(rng.normal());
      for (std::size_t c = 0; c < in.ways; ++c) flat.at(i, c) = v;
    }
    const double q0 = objective::quad_tran(t2.constant(flat), lin, b.et, b.psi).item();
    worst_zero_q = std::max(worst_zero_q, std::abs(q0));
    ++r.cases;
  }
  r.worst = std::max({worst_value, worst_uniform, worst_grad, worst_zero_q});
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "H vs -sum p log p %.2e; uniform vs log k %.2e; grad at uniform %.2e; "
                "Q_tran negative %zu, non-positive for varying u %zu, Q_tran at constant u %.2e",
                worst_value, worst_uniform, worst_grad, negative_q, non_positive_q, worst_zero_q);
  r.detail = buf;
  r.passed = worst_value < 1e-10 && worst_uniform < 1e-10 && worst_grad == 0 && negative_q == 0 &&
             non_positive_q == 0 && worst_zero_q == 0;
  return finish(r, timer);
}

CheckResult check_hessian_oracles(const SuiteConfig& config) {
  Timer timer;
  CheckResult r;
  r.name = "quadratic forms vs explicit J^T J and diag(p) - p p^T";
  r.threshold = 1e-9;
  CounterRng rng = CounterRng::stream(config.seed, {streams::kCheck, 6});
  for (std::size_t d = 0; d < config.hessian_draws; ++d) {
    const std::size_t k = 2 + rng.below(4);
    const std::size_t f = 2 + rng.below(40 / k - 1);  // f * k <= 40
    const std::size_t locations = 1 + rng.below(3);
    const std::size_t shots = 1 + rng.below(2);
    Instance in;
    in.support = random_tensor(rng, {k * shots, locations, f}, 1.0);
    in.query = random_tensor(rng, {2 + rng.below(4), locations, f}, 1.0);
    for (std::size_t j = 0; j < k * shots; ++j) in.labels.push_back(j % k);
    in.ways = k;
    in.dense = rng.below(4) != 0;
    in.mode = rng.below(2) ? objective::TransductiveMode::Fused : objective::TransductiveMode::PerLocation;
    in.psi = random_psi(rng, locations, true);

    ad::Tape tape;
    Bound b = bind_instance(tape, in);
    const Tensor theta = random_tensor(rng, {f, k}, 0.5);
    const Tensor g = random_tensor(rng, {f, k}, 1.0);
    const auto lin = objective::linearize(tape.constant(theta), b.et, b.psi);
    const double q_lsq = objective::quad_lsq(tape.constant(g), lin, b.et, b.psi).item();
    const double q_tran = objective::quad_tran(tape.constant(g), lin, b.et, b.psi).item();

    // vec(W) index i * k + c for W[i, c].
    const std::size_t n = f * k;
    const Mat phi = to_mat(b.et.support.value());
    const Mat a = to_mat(lin.weights.value());
    const std::size_t rows = phi.rows();
    Mat jac = Mat::Zero(rows * k, n);
    for (std::size_t j = 0; j < rows; ++j)
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < f; ++i) jac(j * k + c, i * k + c) = a(j, c) * phi(j, i);
    const double inv_l = 1.0 / static_cast<double>(b.et.locations);
    const double lambda = in.psi.value(PsiField::LambdaReg);
    const Mat h_lsq = 2 * inv_l * jac.transpose() * jac + 2 * lambda * Mat::Identity(n, n);

    const Mat psi_rows = to_mat(lin.query.rows.value());
    const Mat p = to_mat(lin.query_probs.value());
    const double beta = in.psi.value(PsiField::Beta);
    Mat h_tran = Mat::Zero(n, n);
    for (Eigen::Index j = 0; j < psi_rows.rows(); ++j) {
      Mat kj = Mat::Zero(k, n);  // d u_j / d vec(W)
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < f; ++i) kj(c, i * k + c) = beta * psi_rows(j, i);
      const Eigen::VectorXd pj = p.row(j).transpose();
      const Mat curv = Mat(pj.asDiagonal()) - pj * pj.transpose();
      h_tran += static_cast<double>(lin.query.weight) * kj.transpose() * curv * kj;
    }
    const Eigen::VectorXd gv = vec(g);
    const double o_lsq = gv.dot(h_lsq * gv);
    const double o_tran = gv.dot(h_tran * gv);
    r.worst = std::max({r.worst, std::abs(q_lsq - o_lsq) / std::max(1.0, std::abs(o_lsq)),
                        std::abs(q_tran - o_tran) / std::max(1.0, std::abs(o_tran))});
    ++r.cases;
  }
  r.passed = r.worst < r.threshold;
  return finish(r, timer);
}

namespace {

// Fraction of traces whose loss never goes up (beyond rounding).
CheckResult monotone(const SuiteConfig& config, bool transductive) {
  Timer timer;
  CheckResult r;
  const Desk desk(config.seed);
  CounterRng rng = CounterRng::stream(config.seed, {streams::kCheck, transductive ? 8u : 7u});
  std::size_t ok = 0;
  double worst_rise = 0;
  for (std::size_t e = 0; e < config.monotone_episodes; ++e) {
    const Instance in = desk.draw(rng, transductive, 5, 1 + 4 * rng.below(2), 15);
    ad::Tape tape;
    Bound b = bind_instance(tape, in);
    const auto init = rng.below(2) ? learner::InitKind::Support : learner::InitKind::Zero;
    const auto res = learner::run_inner(b.et, b.psi, init, 15);
    bool mono = true;
    const auto& l = res.trace.losses;
    for (std::size_t d = 1; d < l.size(); ++d) {
      const double rise = (static_cast<double>(l[d]) - static_cast<double>(l[d - 1])) /
                          std::max(1.0, std::abs(static_cast<double>(l[d - 1])));
      worst_rise = std::max(worst_rise, rise);
      if (rise > 1e-12) mono = false;
    }
    ok += mono;
    ++r.cases;
  }
  r.worst = 1.0 - static_cast<double>(ok) / static_cast<double>(r.cases);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu / %zu traces non-increasing, largest relative rise %.3e", ok, r.cases,
                worst_rise);
  r.detail = buf;
  return finish(r, timer);
}

}  // namespace

CheckResult check_monotone_inductive(const SuiteConfig& config) {
  CheckResult r = monotone(config, false);
  r.name = "inner loop monotone without the entropy term";
  r.threshold = 0;  // every trace
  r.passed = r.worst <= r.threshold;
  return r;
}

CheckResult check_monotone_transductive(const SuiteConfig& config) {
  CheckResult r = monotone(config, true);
  r.name = "inner loop monotone with the entropy term";
  r.threshold = 0.05;
  r.passed = r.worst <= r.threshold;
  return r;
}

std::vector<CheckResult> run_suite(const SuiteConfig& config) {
  return {check_primitives(config),       check_grad_base(config),
          check_meta_gradient(config),    check_ridge_oracle(config),
          check_step_optimality(config),  check_entropy_identities(config),
          check_hessian_oracles(config),  check_monotone_inductive(config),
          check_monotone_transductive(config)};
}

std::string describe(const CheckResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "[%s] %s: cases=%zu worst=%.3e threshold=%.1e time=%.2fs%s%s",
                r.passed ? "PASS" : "FAIL", r.name.c_str(), r.cases, r.worst, r.threshold, r.seconds,
                r.detail.empty() ? "" : " | ", r.detail.c_str());
  return buf;
}

}  // namespace fiml::verify
