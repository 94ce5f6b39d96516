#include "homoflow/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace homoflow {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstBlockMap = Eigen::Map<const RowMajorMatrix>;
using BlockMap = Eigen::Map<RowMajorMatrix>;

double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

WeightLayout make_layout(const Model::Spec& spec) {
  WeightLayout layout;
  std::visit(overloaded{
                 [&](const FeedForwardNet& net) {
                   Index offset = 0;
                   for (int l = 1; l <= net.num_layers(); ++l) {
                     LayerBlock b{l, net.layer_dims[l], net.layer_dims[l - 1], offset};
                     offset += b.size();
                     layout.blocks.push_back(b);
                   }
                 },
                 [&](const MonomialNet& net) { layout.blocks.push_back({1, net.dim, 1, 0}); },
                 [&](const SingleNeuron& net) { layout.blocks.push_back({1, 1, net.dim, 0}); },
             },
             spec);
  return layout;
}

void validate_activation(const Activation& a) {
  require(a.power >= 1, ErrorCode::InvalidArgument, "activation power must be >= 1");
  require(std::isfinite(a.slope), ErrorCode::InvalidArgument, "activation slope must be finite");
}

// g(w) for the monomial model and its first two derivatives.
double mono_g(const MonomialNet& m, double w) {
  if (m.rectified && w <= 0.0) return 0.0;
  return ipow(w, m.exponent);
}
double mono_dg(const MonomialNet& m, double w) {
  if (m.rectified && w <= 0.0) return 0.0;
  return m.exponent * ipow(w, m.exponent - 1);
}
double mono_d2g(const MonomialNet& m, double w) {
  if (m.rectified && w <= 0.0) return 0.0;
  if (m.exponent < 2) return 0.0;
  return m.exponent * (m.exponent - 1) * ipow(w, m.exponent - 2);
}

struct ForwardCache {
  std::vector<Matrix> pre;   // Z_l, l = 1..L-1
  std::vector<Matrix> post;  // A_l, l = 0..L-1 (A_0 = X)
  Vector outputs;
};

ForwardCache ff_forward(const FeedForwardNet& net, const WeightLayout& layout, const Vector& w,
                        const Matrix& X) {
  ForwardCache c;
  const int L = net.num_layers();
  c.post.reserve(L);
  c.pre.reserve(L - 1);
  c.post.push_back(X);
  for (int l = 1; l < L; ++l) {
    const LayerBlock& b = layout.blocks[l - 1];
    ConstBlockMap W(w.data() + b.offset, b.rows, b.cols);
    Matrix Z = W * c.post.back();
    Matrix A = Z.unaryExpr([&](double z) { return net.activation.value(z); });
    c.pre.push_back(std::move(Z));
    c.post.push_back(std::move(A));
  }
  const LayerBlock& last = layout.blocks[L - 1];
  ConstBlockMap WL(w.data() + last.offset, last.rows, last.cols);
  c.outputs = (WL * c.post.back()).transpose();
  return c;
}

// Backward pass with a cotangent per sample; G holds d(r^T H)/d(layer output).
Vector ff_backward(const FeedForwardNet& net, const WeightLayout& layout, const Vector& w,
                   const ForwardCache& c, const Vector& r) {
  const int L = net.num_layers();
  Vector grad = Vector::Zero(layout.size());
  Matrix G = r.transpose();  // 1 x n
  for (int l = L; l >= 1; --l) {
    const LayerBlock& b = layout.blocks[l - 1];
    BlockMap dW(grad.data() + b.offset, b.rows, b.cols);
    dW.noalias() = G * c.post[l - 1].transpose();
    if (l > 1) {
      ConstBlockMap W(w.data() + b.offset, b.rows, b.cols);
      Matrix back = W.transpose() * G;
      const Matrix& Z = c.pre[l - 2];
      for (Index j = 0; j < back.cols(); ++j)
        for (Index i = 0; i < back.rows(); ++i) back(i, j) *= net.activation.derivative(Z(i, j));
      G = std::move(back);
    }
  }
  return grad;
}

Matrix ff_jacobian(const FeedForwardNet& net, const WeightLayout& layout, const Vector& w,
                   const Matrix& X) {
  const int L = net.num_layers();
  const Index n = X.cols();
  ForwardCache c = ff_forward(net, layout, w, X);
  Matrix J(n, layout.size());
  // Per-sample backward signal; column i belongs to sample i.
  Matrix D = Matrix::Ones(1, n);
  for (int l = L; l >= 1; --l) {
    const LayerBlock& b = layout.blocks[l - 1];
    const Matrix& A = c.post[l - 1];
    for (Index i = 0; i < n; ++i)
      for (Index a = 0; a < b.rows; ++a)
        for (Index col = 0; col < b.cols; ++col) J(i, b.index(a, col)) = D(a, i) * A(col, i);
    if (l > 1) {
      ConstBlockMap W(w.data() + b.offset, b.rows, b.cols);
      Matrix back = W.transpose() * D;
      const Matrix& Z = c.pre[l - 2];
      for (Index j = 0; j < back.cols(); ++j)
        for (Index i = 0; i < back.rows(); ++i) back(i, j) *= net.activation.derivative(Z(i, j));
      D = std::move(back);
    }
  }
  return J;
}

}  // namespace

Dataset::Dataset(Matrix inputs, Vector labels) : X(std::move(inputs)), y(std::move(labels)) {
  validate(*this);
}

void validate(const Dataset& data) {
  require(data.X.rows() >= 1 && data.X.cols() >= 1, ErrorCode::DimensionMismatch,
          "dataset needs d >= 1 and n >= 1");
  require(data.y.size() == data.X.cols(), ErrorCode::DimensionMismatch,
          "label count must equal number of input columns");
  require(data.X.allFinite() && data.y.allFinite(), ErrorCode::InvalidArgument,
          "dataset contains non-finite entries");
}

double Activation::value(double x) const {
  const double base = std::max(x, slope * x);
  return ipow(base, power);
}

double Activation::derivative(double x) const {
  const double base = std::max(x, slope * x);
  double dbase;
  if (x > slope * x)
    dbase = 1.0;
  else if (x < slope * x)
    dbase = slope;
  else
    dbase = slope == 1.0 ? 1.0 : derivative_at_zero.value_or(slope);
  if (power == 1) return dbase;
  return power * ipow(base, power - 1) * dbase;
}

double Activation::second_derivative(double x) const {
  if (power < 2) return 0.0;
  const double base = std::max(x, slope * x);
  const double dbase = x > slope * x ? 1.0 : (x < slope * x ? slope : 0.0);
  return power * (power - 1) * ipow(base, power - 2) * dbase * dbase;
}

Index WeightLayout::size() const {
  Index total = 0;
  for (const auto& b : blocks) total += b.size();
  return total;
}

std::vector<Matrix> unflatten(const WeightVector& w) {
  require(w.flat.size() == w.layout.size(), ErrorCode::DimensionMismatch,
          "flat vector length does not match layout");
  std::vector<Matrix> out;
  out.reserve(w.layout.blocks.size());
  for (const auto& b : w.layout.blocks) out.emplace_back(ConstBlockMap(w.flat.data() + b.offset, b.rows, b.cols));
  return out;
}

WeightVector flatten(const WeightLayout& layout, const std::vector<Matrix>& blocks) {
  require(blocks.size() == layout.blocks.size(), ErrorCode::DimensionMismatch,
          "block count does not match layout");
  WeightVector w{Vector::Zero(layout.size()), layout};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = layout.blocks[i];
    require(blocks[i].rows() == b.rows && blocks[i].cols() == b.cols, ErrorCode::DimensionMismatch,
            "block shape does not match layout");
    BlockMap(w.flat.data() + b.offset, b.rows, b.cols) = blocks[i];
  }
  return w;
}

Model::Model(Spec spec) : spec_(std::move(spec)) {
  std::visit(overloaded{
                 [](const FeedForwardNet& net) {
                   require(net.layer_dims.size() >= 3, ErrorCode::InvalidArgument,
                           "feed-forward net needs at least two layers");
                   require(net.layer_dims.back() == 1, ErrorCode::InvalidArgument,
                           "feed-forward output width must be 1");
                   for (Index k : net.layer_dims)
                     require(k >= 1, ErrorCode::InvalidArgument, "layer widths must be positive");
                   validate_activation(net.activation);
                 },
                 [](const MonomialNet& net) {
                   require(net.exponent >= 1 && net.dim >= 1, ErrorCode::InvalidArgument,
                           "monomial net needs exponent >= 1 and dim >= 1");
                 },
                 [](const SingleNeuron& net) {
                   require(net.dim >= 1, ErrorCode::InvalidArgument, "single neuron needs dim >= 1");
                   validate_activation(net.activation);
                 },
             },
             spec_);
  layout_ = make_layout(spec_);
}

Index Model::input_dim() const {
  return std::visit(overloaded{
                        [](const FeedForwardNet& n) { return n.layer_dims.front(); },
                        [](const MonomialNet& n) { return n.dim; },
                        [](const SingleNeuron& n) { return n.dim; },
                    },
                    spec_);
}

int Model::nominal_degree() const {
  return std::visit(overloaded{
                        [](const FeedForwardNet& n) {
                          int degree = 0;
                          int term = 1;
                          for (int l = 0; l < n.num_layers(); ++l) {
                            degree += term;
                            term *= n.activation.power;
                          }
                          return degree;
                        },
                        [](const MonomialNet& n) { return n.exponent; },
                        [](const SingleNeuron& n) { return n.activation.power; },
                    },
                    spec_);
}

std::string Model::describe() const {
  std::ostringstream os;
  std::visit(overloaded{
                 [&](const FeedForwardNet& n) {
                   os << "feedforward[";
                   for (std::size_t i = 0; i < n.layer_dims.size(); ++i) os << (i ? "," : "") << n.layer_dims[i];
                   os << "] p=" << n.activation.power << " alpha=" << n.activation.slope;
                 },
                 [&](const MonomialNet& n) {
                   os << "monomial m=" << n.exponent << " d=" << n.dim << (n.rectified ? " rectified" : "");
                 },
                 [&](const SingleNeuron& n) {
                   os << "single_neuron d=" << n.dim << " p=" << n.activation.power
                      << " alpha=" << n.activation.slope;
                 },
             },
             spec_);
  return os.str();
}

const FeedForwardNet& Model::feed_forward() const {
  require(is_feed_forward(), ErrorCode::InvalidArgument, "model is not feed-forward");
  return std::get<FeedForwardNet>(spec_);
}

void Model::check_shapes(const Vector& w, const Matrix& X) const {
  require(w.size() == num_weights(), ErrorCode::DimensionMismatch,
          "weight vector has length " + std::to_string(w.size()) + ", model expects " +
              std::to_string(num_weights()));
  require(X.rows() == input_dim(), ErrorCode::DimensionMismatch,
          "input dimension " + std::to_string(X.rows()) + " does not match model input " +
              std::to_string(input_dim()));
}

Vector Model::evaluate(const Vector& w, const Matrix& X) const {
  check_shapes(w, X);
  return std::visit(overloaded{
                        [&](const FeedForwardNet& n) { return ff_forward(n, layout_, w, X).outputs; },
                        [&](const MonomialNet& n) {
                          Vector g = w.unaryExpr([&](double v) { return mono_g(n, v); });
                          return Vector(X.transpose() * g);
                        },
                        [&](const SingleNeuron& n) {
                          Vector z = X.transpose() * w;
                          return Vector(z.unaryExpr([&](double v) { return n.activation.value(v); }));
                        },
                    },
                    spec_);
}

Matrix Model::jacobian(const Vector& w, const Matrix& X) const {
  check_shapes(w, X);
  Matrix J = std::visit(overloaded{
                            [&](const FeedForwardNet& n) { return ff_jacobian(n, layout_, w, X); },
                            [&](const MonomialNet& n) {
                              Vector dg = w.unaryExpr([&](double v) { return mono_dg(n, v); });
                              return Matrix(X.transpose() * dg.asDiagonal());
                            },
                            [&](const SingleNeuron& n) {
                              Vector z = X.transpose() * w;
                              Vector s = z.unaryExpr([&](double v) { return n.activation.derivative(v); });
                              return Matrix(s.asDiagonal() * X.transpose());
                            },
                        },
                        spec_);
  require(J.allFinite(), ErrorCode::NonFiniteGradient, "Jacobian has non-finite entries");
  return J;
}

Pullback Model::pullback(const Vector& w, const Matrix& X, const CotangentFn& cotangent) const {
  check_shapes(w, X);
  Pullback out;
  std::visit(overloaded{
                 [&](const FeedForwardNet& n) {
                   ForwardCache c = ff_forward(n, layout_, w, X);
                   Vector r = cotangent(c.outputs);
                   out.grad = ff_backward(n, layout_, w, c, r);
                   out.outputs = std::move(c.outputs);
                 },
                 [&](const MonomialNet& n) {
                   Vector g = w.unaryExpr([&](double v) { return mono_g(n, v); });
                   out.outputs = X.transpose() * g;
                   Vector r = cotangent(out.outputs);
                   Vector dg = w.unaryExpr([&](double v) { return mono_dg(n, v); });
                   out.grad = dg.cwiseProduct(X * r);
                 },
                 [&](const SingleNeuron& n) {
                   Vector z = X.transpose() * w;
                   out.outputs = z.unaryExpr([&](double v) { return n.activation.value(v); });
                   Vector r = cotangent(out.outputs);
                   Vector s = z.unaryExpr([&](double v) { return n.activation.derivative(v); });
                   out.grad = X * s.cwiseProduct(r);
                 },
             },
             spec_);
  require(out.grad.allFinite(), ErrorCode::NonFiniteGradient, "gradient has non-finite entries");
  return out;
}

Vector Model::vjp(const Vector& w, const Matrix& X, const Vector& r) const {
  require(r.size() == X.cols(), ErrorCode::DimensionMismatch, "cotangent length must equal sample count");
  return pullback(w, X, [&](const Vector&) { return r; }).grad;
}

std::optional<Matrix> Model::weighted_hessian(const Vector& w, const Matrix& X, const Vector& r) const {
  check_shapes(w, X);
  require(r.size() == X.cols(), ErrorCode::DimensionMismatch, "weight length must equal sample count");
  return std::visit(overloaded{
                        [&](const FeedForwardNet&) -> std::optional<Matrix> { return std::nullopt; },
                        [&](const MonomialNet& n) -> std::optional<Matrix> {
                          Vector d2g = w.unaryExpr([&](double v) { return mono_d2g(n, v); });
                          Vector diag = d2g.cwiseProduct(X * r);
                          return Matrix(diag.asDiagonal());
                        },
                        [&](const SingleNeuron& n) -> std::optional<Matrix> {
                          Vector z = X.transpose() * w;
                          Vector s2 = z.unaryExpr([&](double v) { return n.activation.second_derivative(v); });
                          return Matrix(X * s2.cwiseProduct(r).asDiagonal() * X.transpose());
                        },
                    },
                    spec_);
}

Vector evaluate_batch(const Model& model, const Vector& w, const Dataset& data) {
  return model.evaluate(w, data.X);
}

Matrix jacobian(const Model& model, const Vector& w, const Dataset& data) { return model.jacobian(w, data.X); }

HomogeneityResult homogeneity_check(const Model& model, const Vector& w, const Dataset& data,
                                    const std::vector<int>& degrees_to_try) {
  require(!degrees_to_try.empty(), ErrorCode::InvalidArgument, "no candidate degrees given");
  require(w.norm() > 0.0, ErrorCode::InvalidArgument, "homogeneity check needs w != 0");
  const Vector h = model.evaluate(w, data.X);
  const Vector euler = model.jacobian(w, data.X) * w;

  HomogeneityResult out;
  std::size_t best = 0;
  for (std::size_t c = 0; c < degrees_to_try.size(); ++c) {
    const double r = (euler - degrees_to_try[c] * h).cwiseAbs().maxCoeff();
    out.residual_per_degree.push_back(r);
    if (r < out.residual_per_degree[best]) best = c;
  }
  const double tie_tol = 1e-9 * (1.0 + h.cwiseAbs().maxCoeff());
  for (std::size_t c = 0; c < degrees_to_try.size(); ++c) {
    if (c == best || degrees_to_try[c] == degrees_to_try[best]) continue;
    if (std::abs(out.residual_per_degree[c] - out.residual_per_degree[best]) <= tie_tol)
      fail(ErrorCode::AmbiguousDegree, "degrees " + std::to_string(degrees_to_try[best]) + " and " +
                                           std::to_string(degrees_to_try[c]) + " fit equally well");
  }
  out.degree = degrees_to_try[best];
  out.residual = out.residual_per_degree[best];
  return out;
}

Vector random_direction(Index k, std::uint64_t seed) {
  require(k >= 1, ErrorCode::InvalidArgument, "direction length must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(k);
  for (Index i = 0; i < k; ++i) v(i) = normal(rng);
  return v / v.norm();
}

Vector scale_init(const Vector& direction, double delta) {
  require(delta >= 0.0 && std::isfinite(delta), ErrorCode::InvalidArgument, "init scale must be >= 0");
  return delta * direction;
}

}  // namespace homoflow
