#include "homoflow/ncf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

namespace homoflow {

namespace {

Vector correlation(const Problem& prob) { return target_correlation(prob.loss, prob.data.y); }

double sym_max_abs_eigen(const Matrix& H) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, ErrorCode::EigenFailure, "eigen decomposition did not converge");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

NcfSign classify_sign(double value, double threshold) {
  if (value > threshold) return NcfSign::Positive;
  if (value < -threshold) return NcfSign::Negative;
  return NcfSign::Zero;
}

}  // namespace

double ncf_value(const Problem& prob, const Vector& u) {
  return correlation(prob).dot(prob.model.evaluate(u, prob.data.X));
}

Vector ncf_grad(const Problem& prob, const Vector& u) { return prob.model.vjp(u, prob.data.X, correlation(prob)); }

Matrix ncf_hessian(const Problem& prob, const Vector& u) {
  require(u.norm() > 0.0, ErrorCode::InvalidArgument, "Hessian requested at u = 0");
  const Vector yt = correlation(prob);
  if (auto analytic = prob.model.weighted_hessian(u, prob.data.X, yt)) {
    require(analytic->allFinite(), ErrorCode::NonFiniteHessian, "Hessian has non-finite entries");
    return *analytic;
  }
  const Index k = u.size();
  const double h = 1e-5 * (1.0 + u.norm());
  Matrix H(k, k);
  Vector up = u, um = u;
  for (Index j = 0; j < k; ++j) {
    up(j) = u(j) + h;
    um(j) = u(j) - h;
    H.col(j) = (prob.model.vjp(up, prob.data.X, yt) - prob.model.vjp(um, prob.data.X, yt)) / (2.0 * h);
    up(j) = u(j);
    um(j) = u(j);
  }
  Matrix S = 0.5 * (H + H.transpose());
  require(S.allFinite(), ErrorCode::NonFiniteHessian, "Hessian has non-finite entries");
  return S;
}

int detect_degree(const Problem& prob, const Vector& w) {
  const int nominal = prob.model.nominal_degree();
  std::vector<int> candidates(std::max(nominal + 2, 4));
  std::iota(candidates.begin(), candidates.end(), 1);
  Vector probe = w;
  if (probe.norm() == 0.0) probe = random_direction(w.size(), 0x5eed);
  try {
    return homogeneity_check(prob.model, probe / probe.norm(), prob.data, candidates).degree;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AmbiguousDegree) throw;
  }
  // The output vanishes at w (e.g. dead neurons); any generic point decides.
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    try {
      return homogeneity_check(prob.model, random_direction(w.size(), seed), prob.data, candidates).degree;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AmbiguousDegree) throw;
    }
  }
  fail(ErrorCode::AmbiguousDegree, "model output vanishes at every probe point");
}

std::string to_string(NcfSign s) {
  switch (s) {
    case NcfSign::Positive: return "positive";
    case NcfSign::Zero: return "zero";
    case NcfSign::Negative: return "negative";
  }
  return "?";
}

std::string to_string(KktOrder o) {
  switch (o) {
    case KktOrder::SecondOrder: return "second_order";
    case KktOrder::FirstOrderOnly: return "first_order_only";
    case KktOrder::NotKkt: return "not_kkt";
  }
  return "?";
}

Matrix tangent_basis(const Vector& w) {
  const Index k = w.size();
  require(k >= 1 && std::abs(w.norm() - 1.0) <= 1e-8, ErrorCode::InvalidArgument,
          "tangent basis needs a unit vector");
  if (k == 1) return Matrix(1, 0);
  // Reflect e1 onto -w or w, whichever avoids cancellation in v.
  Vector v = w;
  v(0) += w(0) >= 0.0 ? 1.0 : -1.0;
  const double vv = v.squaredNorm();
  Matrix P(k, k - 1);
  for (Index j = 1; j < k; ++j) {
    Vector col = -2.0 * v(j) / vv * v;
    col(j) += 1.0;
    P.col(j - 1) = col;
  }
  return P;
}

double delta_gap(const Problem& prob, const Vector& w) {
  const Index k = w.size();
  if (k == 1) return std::numeric_limits<double>::infinity();
  const int L = detect_degree(prob, w);
  const Matrix P = tangent_basis(w);
  const Matrix M = P.transpose() * ncf_hessian(prob, w) * P;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, ErrorCode::EigenFailure, "tangent eigenproblem did not converge");
  return L * ncf_value(prob, w) - es.eigenvalues().maxCoeff();
}

KKTReport certify_kkt(const Problem& prob, const Vector& w, const KktOptions& opt) {
  KKTReport r;
  r.point = w / w.norm();
  r.degree = detect_degree(prob, r.point);
  r.value = ncf_value(prob, r.point);
  r.residual = (ncf_grad(prob, r.point) - r.degree * r.value * r.point).norm();
  r.sign = classify_sign(r.value, opt.positive_threshold);
  if (r.residual > opt.tol) {
    r.order = KktOrder::NotKkt;
    r.delta_gap = std::numeric_limits<double>::quiet_NaN();
    r.hessian_norm = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  if (!opt.second_order) {
    r.order = KktOrder::FirstOrderOnly;
    r.delta_gap = std::numeric_limits<double>::quiet_NaN();
    r.hessian_norm = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const Matrix H = ncf_hessian(prob, r.point);
  r.hessian_norm = sym_max_abs_eigen(H);
  if (r.point.size() == 1) {
    r.delta_gap = std::numeric_limits<double>::infinity();
  } else {
    const Matrix P = tangent_basis(r.point);
    const Matrix M = P.transpose() * H * P;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    require(es.info() == Eigen::Success, ErrorCode::EigenFailure, "tangent eigenproblem did not converge");
    r.delta_gap = r.degree * r.value - es.eigenvalues().maxCoeff();
  }
  r.order = r.delta_gap > 0.0 ? KktOrder::SecondOrder : KktOrder::FirstOrderOnly;
  return r;
}

KKTReport find_kkt(const Problem& prob, const Vector& u0, const KktOptions& opt) {
  require(u0.size() == prob.model.num_weights(), ErrorCode::DimensionMismatch, "u0 has the wrong length");
  require(std::abs(u0.norm() - 1.0) <= 1e-8, ErrorCode::InvalidArgument, "find_kkt needs a unit-norm start");
  const Vector yt = correlation(prob);
  const OdeRhs rhs = [&](double, const Vector& u, Vector& du) {
    const Vector g = prob.model.vjp(u, prob.data.X, yt);
    du = g - (u.dot(g) / u.squaredNorm()) * u;
  };

  KktOptions first = opt;
  first.second_order = false;
  Vector u = u0;
  long steps = 0;
  long nonpositive_steps = 0;
  double t = 0.0;
  constexpr long renormalize_every = 2000;

  for (;;) {
    KKTReport probe = certify_kkt(prob, u, first);
    if (probe.residual <= opt.tol) break;
    require(steps < opt.max_steps, ErrorCode::MaxStepsExceeded,
            "ascent flow did not reach residual " + std::to_string(opt.tol) + " (last " +
                std::to_string(probe.residual) + ")");
    if (nonpositive_steps >= opt.patience)
      fail(ErrorCode::ConvergedToZero, "NCF stayed non-positive for " + std::to_string(nonpositive_steps) +
                                           " steps without the direction settling");
    long chunk = 0;
    const OdeResult res = dopri5(rhs, t, u, std::numeric_limits<double>::infinity(), opt.ode,
                                 [&](const StepView& s) {
                                   ++steps;
                                   ++chunk;
                                   const double scale = std::pow(s.y.norm(), std::max(probe.degree - 1, 0));
                                   if (ncf_value(prob, s.y) <= opt.positive_threshold) ++nonpositive_steps;
                                   if (s.dy.norm() <= 0.25 * opt.tol * scale) return false;
                                   return chunk < renormalize_every && steps < opt.max_steps &&
                                          nonpositive_steps < opt.patience;
                                 });
    t = res.t;
    u = res.y / res.y.norm();
  }
  KKTReport r = certify_kkt(prob, u, opt);
  r.steps = steps;
  r.flow_time = t;
  return r;
}

InequalityTerms inequality_terms(const Problem& prob, const Vector& wstar, double value_star, double delta,
                                 int degree, const Vector& w, double t1, double t2) {
  const double L = degree;
  InequalityTerms out;
  const Vector a = t1 * w;
  const Vector b = t2 * wstar;
  const Vector d = a - b;
  const Vector ga = t1 == 0.0 ? Vector(Vector::Zero(w.size())) : ncf_grad(prob, a);
  const Vector gb = t2 == 0.0 ? Vector(Vector::Zero(w.size())) : ncf_grad(prob, b);
  out.cocoercive = (ga - gb).dot(d) - L * (L - 1.0) * value_star * std::pow(t2, L - 2.0) * d.squaredNorm();

  const double nw = ncf_value(prob, w);
  const double dist2 = (w - wstar).squaredNorm();
  out.alignment = wstar.dot(ncf_grad(prob, w)) - L * nw * wstar.dot(w) - 0.5 * delta * dist2;
  out.value_gap = nw - value_star + 0.25 * delta * dist2;
  return out;
}

double InequalityProbeReport::max_violation() const {
  return std::max({max_violation_cocoercive, max_violation_alignment, max_violation_value_gap});
}

InequalityProbeReport inequality_probe(const Problem& prob, const Vector& wstar, double gamma, long n_samples,
                                       std::uint64_t seed) {
  require(gamma > 0.0 && gamma <= 2.0, ErrorCode::InvalidArgument, "gamma must lie in (0, 2]");
  require(n_samples >= 1, ErrorCode::InvalidArgument, "need at least one sample");
  const KKTReport cert = certify_kkt(prob, wstar);
  InequalityProbeReport rep;
  rep.gamma = gamma;
  rep.samples = n_samples;
  rep.delta = cert.delta_gap;
  const Vector ws = cert.point;
  const Index k = ws.size();
  const Matrix P = tangent_basis(ws);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> cos_dist(1.0 - gamma, 1.0);
  std::uniform_real_distribution<double> t_dist(0.0, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (long s = 0; s < n_samples; ++s) {
    Vector w = ws;
    if (k > 1) {
      const double c = std::max(cos_dist(rng), -1.0);
      Vector z(k - 1);
      for (Index i = 0; i < k - 1; ++i) z(i) = normal(rng);
      const Vector b = P * (z / z.norm());
      w = c * ws + std::sqrt(std::max(0.0, 1.0 - c * c)) * b;
    }
    double t1 = t_dist(rng), t2 = t_dist(rng);
    if (t1 > t2) std::swap(t1, t2);
    const InequalityTerms terms = inequality_terms(prob, ws, cert.value, cert.delta_gap, cert.degree, w, t1, t2);
    rep.max_violation_cocoercive = std::max(rep.max_violation_cocoercive, terms.cocoercive);
    rep.max_violation_alignment = std::max(rep.max_violation_alignment, -terms.alignment);
    rep.max_violation_value_gap = std::max(rep.max_violation_value_gap, terms.value_gap);
  }
  return rep;
}

}  // namespace homoflow
