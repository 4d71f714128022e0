#include "mmg/tensor.hpp"

#include "mmg/errors.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mmg {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_of(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

using Node = detail::TensorNode;
using NodePtr = std::shared_ptr<Node>;

const Matrix& val(const Tensor& t, const char* op) {
    if (!t.valid()) throw Error(std::string(op) + ": null tensor handle");
    return t.node()->value;
}

bool track_any(std::initializer_list<const Tensor*> parents) {
    if (!g_grad_enabled) return false;
    for (const Tensor* p : parents)
        if (p->node()->wants_grad()) return true;
    return false;
}

NodePtr fresh(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

// Wire the result node into the tape: remember parents and the pull-back
// closure.  Call only when track_any said yes.
void attach(const NodePtr& n, std::initializer_list<Tensor> parents,
            std::function<void()> fn) {
    n->tracked = true;
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
}

void accum(Node* p, const Matrix& delta) {
    if (p->wants_grad()) p->grad_ref() += delta;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch (" + shape_of(a) +
                         " vs " + shape_of(b) + ")");
}

void require_vector(const Matrix& a, const char* op) {
    if (a.cols() != 1)
        throw ShapeError(std::string(op) + ": expected a column vector, got " +
                         shape_of(a));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::scalar(double v, bool requires_grad) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return matrix(m, requires_grad);
}

Tensor Tensor::vector(const Vector& v, bool requires_grad) {
    return matrix(Matrix(v), requires_grad);
}

Tensor Tensor::matrix(const Matrix& m, bool requires_grad) {
    auto n = fresh(m);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
    return matrix(Matrix::Zero(rows, cols), requires_grad);
}

const Matrix& Tensor::value() const { return val(*this, "value"); }

Matrix& Tensor::leaf_value() {
    if (!valid()) throw Error("leaf_value: null tensor handle");
    if (!node_->parents.empty())
        throw Error("leaf_value: in-place mutation is only allowed on leaves");
    return node_->value;
}

const Matrix& Tensor::grad() const {
    if (!valid()) throw Error("grad: null tensor handle");
    return node_->grad_ref();
}

bool Tensor::has_grad() const { return valid() && node_->grad.size() != 0; }

void Tensor::zero_grad() {
    if (valid() && node_->grad.size() != 0) node_->grad.setZero();
}

bool Tensor::requires_grad() const { return valid() && node_->requires_grad; }
bool Tensor::tracked() const { return valid() && node_->tracked; }

Eigen::Index Tensor::rows() const { return val(*this, "rows").rows(); }
Eigen::Index Tensor::cols() const { return val(*this, "cols").cols(); }

double Tensor::item() const {
    const Matrix& m = val(*this, "item");
    if (m.size() != 1)
        throw ShapeError("item: tensor is " + shape_of(m) + ", not a scalar");
    return m(0, 0);
}

Tensor Tensor::detached_copy(bool requires_grad) const {
    return matrix(val(*this, "detached_copy"), requires_grad);
}

// ---- NoGradGuard ---------------------------------------------------------

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- arithmetic ----------------------------------------------------------

Tensor operator+(const Tensor& a, const Tensor& b) {
    const Matrix& A = val(a, "add");
    const Matrix& B = val(b, "add");
    require_same_shape(A, B, "add");
    auto n = fresh(A + B);
    if (track_any({&a, &b})) {
        Node* pa = a.node().get();
        Node* pb = b.node().get();
        Node* out = n.get();
        attach(n, {a, b}, [pa, pb, out] {
            const Matrix& g = out->grad_ref();
            accum(pa, g);
            accum(pb, g);
        });
    }
    return Tensor::wrap(n);
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    const Matrix& A = val(a, "sub");
    const Matrix& B = val(b, "sub");
    require_same_shape(A, B, "sub");
    auto n = fresh(A - B);
    if (track_any({&a, &b})) {
        Node* pa = a.node().get();
        Node* pb = b.node().get();
        Node* out = n.get();
        attach(n, {a, b}, [pa, pb, out] {
            const Matrix& g = out->grad_ref();
            accum(pa, g);
            accum(pb, -g);
        });
    }
    return Tensor::wrap(n);
}

Tensor operator*(const Tensor& a, const Tensor& b) {
    const Matrix& A = val(a, "mul");
    const Matrix& B = val(b, "mul");
    // scalar broadcast
    if (A.size() == 1 && B.size() != 1) return scale(b, a);
    if (B.size() == 1 && A.size() != 1) return scale(a, b);
    require_same_shape(A, B, "mul");
    auto n = fresh(A.cwiseProduct(B));
    if (track_any({&a, &b})) {
        Node* pa = a.node().get();
        Node* pb = b.node().get();
        Node* out = n.get();
        attach(n, {a, b}, [pa, pb, out] {
            const Matrix& g = out->grad_ref();
            accum(pa, g.cwiseProduct(pb->value));
            accum(pb, g.cwiseProduct(pa->value));
        });
    }
    return Tensor::wrap(n);
}

Tensor operator/(const Tensor& a, const Tensor& b) {
    const Matrix& A = val(a, "div");
    const Matrix& B = val(b, "div");
    require_same_shape(A, B, "div");
    auto n = fresh(A.cwiseQuotient(B));
    if (track_any({&a, &b})) {
        Node* pa = a.node().get();
        Node* pb = b.node().get();
        Node* out = n.get();
        attach(n, {a, b}, [pa, pb, out] {
            const Matrix& g = out->grad_ref();
            accum(pa, g.cwiseQuotient(pb->value));
            accum(pb, -g.cwiseProduct(pa->value)
                           .cwiseQuotient(pb->value.cwiseProduct(pb->value)));
        });
    }
    return Tensor::wrap(n);
}

Tensor operator-(const Tensor& a) {
    const Matrix& A = val(a, "neg");
    auto n = fresh(-A);
    if (track_any({&a})) {
        Node* pa = a.node().get();
        Node* out = n.get();
        attach(n, {a}, [pa, out] { accum(pa, -out->grad_ref()); });
    }
    return Tensor::wrap(n);
}

Tensor operator+(const Tensor& a, double c) {
    const Matrix& A = val(a, "add");
    auto n = fresh((A.array() + c).matrix());
    if (track_any({&a})) {
        Node* pa = a.node().get();
        Node* out = n.get();
        attach(n, {a}, [pa, out] { accum(pa, out->grad_ref()); });
    }
    return Tensor::wrap(n);
}

Tensor operator+(double c, const Tensor& a) { return a + c; }
Tensor operator-(const Tensor& a, double c) { return a + (-c); }

Tensor operator-(double c, const Tensor& a) {
    const Matrix& A = val(a, "sub");
    auto n = fresh((c - A.array()).matrix());
    if (track_any({&a})) {
        Node* pa = a.node().get();
        Node* out = n.get();
        attach(n, {a}, [pa, out] { accum(pa, -out->grad_ref()); });
    }
    return Tensor::wrap(n);
}

Tensor operator*(const Tensor& a, double c) {
    const Matrix& A = val(a, "mul");
    auto n = fresh(A * c);
    if (track_any({&a})) {
        Node* pa = a.node().get();
        Node* out = n.get();
        attach(n, {a}, [pa, c, out] { accum(pa, c * out->grad_ref()); });
    }
    return Tensor::wrap(n);
}

Tensor operator*(double c, const Tensor& a) { return a * c; }
Tensor operator/(const Tensor& a, double c) { return a * (1.0 / c); }

Tensor scale(const Tensor& x, const Tensor& s) {
    const Matrix& X = val(x, "scale");
    const Matrix& S = val(s, "scale");
    if (S.size() != 1)
        throw ShapeError("scale: factor must be 1x1, got " + shape_of(S));
    auto n = fresh(X * S(0, 0));
    if (track_any({&x, &s})) {
        Node* px = x.node().get();
        Node* ps = s.node().get();
        Node* out = n.get();
        attach(n, {x, s}, [px, ps, out] {
            const Matrix& g = out->grad_ref();
            accum(px, g * ps->value(0, 0));
            if (ps->wants_grad()) {
                Matrix d(1, 1);
                d(0, 0) = g.cwiseProduct(px->value).sum();
                ps->grad_ref() += d;
            }
        });
    }
    return Tensor::wrap(n);
}

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Matrix& A = val(a, "matmul");
    const Matrix& B = val(b, "matmul");
    if (A.cols() != B.rows())
        throw ShapeError("matmul: inner dimensions mismatch (" + shape_of(A) +
                         " vs " + shape_of(B) + ")");
    auto n = fresh(A * B);
    if (track_any({&a, &b})) {
        Node* pa = a.node().get();
        Node* pb = b.node().get();
        Node* out = n.get();
        attach(n, {a, b}, [pa, pb, out] {
            const Matrix& g = out->grad_ref();
            accum(pa, g * pb->value.transpose());
            accum(pb, pa->value.transpose() * g);
        });
    }
    return Tensor::wrap(n);
}

Tensor transpose(const Tensor& a) {
    const Matrix& A = val(a, "transpose");
    auto n = fresh(A.transpose());
    if (track_any({&a})) {
        Node* pa = a.node().get();
        Node* out = n.get();
        attach(n, {a},
               [pa, out] { accum(pa, out->grad_ref().transpose()); });
    }
    return Tensor::wrap(n);
}

Tensor dot(const Tensor& u, const Tensor& v) {
    const Matrix& U = val(u, "dot");
    const Matrix& V = val(v, "dot");
    require_vector(U, "dot");
    require_vector(V, "dot");
    require_same_shape(U, V, "dot");
    Matrix r(1, 1);
    r(0, 0) = (U.transpose() * V)(0, 0);
    auto n = fresh(r);
    if (track_any({&u, &v})) {
        Node* pu = u.node().get();
        Node* pv = v.node().get();
        Node* out = n.get();
        attach(n, {u, v}, [pu, pv, out] {
            const double g = out->grad_ref()(0, 0);
            accum(pu, g * pv->value);
            accum(pv, g * pu->value);
        });
    }
    return Tensor::wrap(n);
}

Tensor norm(const Tensor& u) {
    const Matrix& U = val(u, "norm");
    require_vector(U, "norm");
    Matrix r(1, 1);
    r(0, 0) = U.norm();
    auto n = fresh(r);
    if (track_any({&u})) {
        Node* pu = u.node().get();
        Node* out = n.get();
        attach(n, {u}, [pu, out] {
            const double nv = out->value(0, 0);
            // At the origin the norm has no gradient; use subgradient 0.
            if (nv > 0.0)
                accum(pu, (out->grad_ref()(0, 0) / nv) * pu->value);
        });
    }
    return Tensor::wrap(n);
}

Tensor cosine_sim(const Tensor& u, const Tensor& v, ZeroNormPolicy policy) {
    const Matrix& U = val(u, "cosine_sim");
    const Matrix& V = val(v, "cosine_sim");
    require_vector(U, "cosine_sim");
    require_vector(V, "cosine_sim");
    require_same_shape(U, V, "cosine_sim");
    constexpr double kEps = 1e-12;
    if (U.norm() < kEps || V.norm() < kEps) {
        if (policy == ZeroNormPolicy::Error)
            throw ZeroNormError("cosine_sim: vector norm below 1e-12");
        // Defined fallback: constant 0 that carries no gradient.
        return Tensor::scalar(0.0);
    }
    // Composed from primitives so the gradient comes for free.
    return dot(u, v) / (norm(u) * norm(v));
}

// ---- nonlinearities ------------------------------------------------------

Tensor relu(const Tensor& x) {
    const Matrix& X = val(x, "relu");
    auto n = fresh(X.cwiseMax(0.0));
    if (track_any({&x})) {
        Node* px = x.node().get();
        Node* out = n.get();
        attach(n, {x}, [px, out] {
            const Matrix mask = px->value.unaryExpr(
                [](double v) { return v > 0.0 ? 1.0 : 0.0; });
            accum(px, out->grad_ref().cwiseProduct(mask));
        });
    }
    return Tensor::wrap(n);
}

Tensor leaky_relu(const Tensor& x, double slope) {
    if (!(slope > 0.0 && slope < 1.0))
        throw Error("leaky_relu: slope must lie in (0, 1)");
    const Matrix& X = val(x, "leaky_relu");
    auto n = fresh(X.cwiseMax(slope * X));
    if (track_any({&x})) {
        Node* px = x.node().get();
        Node* out = n.get();
        attach(n, {x}, [px, slope, out] {
            // Derivative 1 where x > 0, otherwise slope (including x == 0).
            const Matrix d = px->value.unaryExpr(
                [slope](double v) { return v > 0.0 ? 1.0 : slope; });
            accum(px, out->grad_ref().cwiseProduct(d));
        });
    }
    return Tensor::wrap(n);
}

Tensor sigmoid(const Tensor& x) {
    const Matrix& X = val(x, "sigmoid");
    auto n = fresh(X.unaryExpr([](double v) { return stable_sigmoid(v); }));
    if (track_any({&x})) {
        Node* px = x.node().get();
        Node* out = n.get();
        attach(n, {x}, [px, out] {
            const Matrix& s = out->value;
            const Matrix d =
                s.cwiseProduct((1.0 - s.array()).matrix());
            accum(px, out->grad_ref().cwiseProduct(d));
        });
    }
    return Tensor::wrap(n);
}

// ---- softmax family ------------------------------------------------------

namespace {

// Shared softmax-over-vector forward; `mask` may be empty meaning all-on.
Matrix softmax_values(const Matrix& X, const std::vector<char>& mask,
                      const char* op) {
    bool any = mask.empty();
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
        any = true;
        mx = std::max(mx, X(i, 0));
    }
    if (!any)
        throw IsolatedNodeError(std::string(op) +
                                ": empty neighborhood (no unmasked entries)");
    Matrix y = Matrix::Zero(X.rows(), 1);
    double total = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
        const double e = std::exp(X(i, 0) - mx);
        y(i, 0) = e;
        total += e;
    }
    y /= total;
    return y;
}

} // namespace

Tensor masked_softmax(const Tensor& logits, const std::vector<char>& mask) {
    const Matrix& X = val(logits, "masked_softmax");
    require_vector(X, "masked_softmax");
    if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != X.rows())
        throw ShapeError("masked_softmax: mask length " +
                         std::to_string(mask.size()) + " vs logits " +
                         shape_of(X));
    auto n = fresh(softmax_values(X, mask, "masked_softmax"));
    if (track_any({&logits})) {
        Node* px = logits.node().get();
        Node* out = n.get();
        attach(n, {logits}, [px, out] {
            // dx_i = y_i * (g_i - sum_j g_j y_j); zero entries stay zero.
            const Matrix& y = out->value;
            const Matrix& g = out->grad_ref();
            const double s = g.cwiseProduct(y).sum();
            accum(px, y.cwiseProduct((g.array() - s).matrix()));
        });
    }
    return Tensor::wrap(n);
}

Tensor softmax(const Tensor& logits) {
    return masked_softmax(logits, {});
}

Tensor softmax_rows(const Tensor& m) {
    const Matrix& X = val(m, "softmax_rows");
    Matrix Y(X.rows(), X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const double mx = X.row(r).maxCoeff();
        Eigen::RowVectorXd e = (X.row(r).array() - mx).exp();
        Y.row(r) = e / e.sum();
    }
    auto n = fresh(Y);
    if (track_any({&m})) {
        Node* px = m.node().get();
        Node* out = n.get();
        attach(n, {m}, [px, out] {
            const Matrix& y = out->value;
            const Matrix& g = out->grad_ref();
            Matrix d(y.rows(), y.cols());
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double s = g.row(r).cwiseProduct(y.row(r)).sum();
                d.row(r) = y.row(r).cwiseProduct(
                    (g.row(r).array() - s).matrix());
            }
            accum(px, d);
        });
    }
    return Tensor::wrap(n);
}

// ---- shape surgery -------------------------------------------------------

Tensor concat(const Tensor& u, const Tensor& v) {
    const Matrix& U = val(u, "concat");
    const Matrix& V = val(v, "concat");
    require_vector(U, "concat");
    require_vector(V, "concat");
    Matrix r(U.rows() + V.rows(), 1);
    r.topRows(U.rows()) = U;
    r.bottomRows(V.rows()) = V;
    auto n = fresh(r);
    if (track_any({&u, &v})) {
        Node* pu = u.node().get();
        Node* pv = v.node().get();
        Node* out = n.get();
        const Eigen::Index nu = U.rows();
        attach(n, {u, v}, [pu, pv, nu, out] {
            const Matrix& g = out->grad_ref();
            accum(pu, g.topRows(nu));
            accum(pv, g.bottomRows(g.rows() - nu));
        });
    }
    return Tensor::wrap(n);
}

Tensor slice(const Tensor& u, Eigen::Index start, Eigen::Index len) {
    const Matrix& U = val(u, "slice");
    require_vector(U, "slice");
    if (start < 0 || len < 0 || start + len > U.rows())
        throw IndexError("slice: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of range for " +
                         shape_of(U));
    auto n = fresh(U.middleRows(start, len));
    if (track_any({&u})) {
        Node* pu = u.node().get();
        Node* out = n.get();
        attach(n, {u}, [pu, start, len, out] {
            if (!pu->wants_grad()) return;
            Matrix d = Matrix::Zero(pu->value.rows(), 1);
            d.middleRows(start, len) = out->grad_ref();
            pu->grad_ref() += d;
        });
    }
    return Tensor::wrap(n);
}

Tensor element(const Tensor& u, Eigen::Index i) {
    return slice(u, i, 1);
}

Tensor row(const Tensor& m, Eigen::Index i) {
    const Matrix& M = val(m, "row");
    if (i < 0 || i >= M.rows())
        throw IndexError("row: index " + std::to_string(i) +
                         " out of range for " + shape_of(M));
    auto n = fresh(M.row(i).transpose());
    if (track_any({&m})) {
        Node* pm = m.node().get();
        Node* out = n.get();
        attach(n, {m}, [pm, i, out] {
            if (!pm->wants_grad()) return;
            Matrix d = Matrix::Zero(pm->value.rows(), pm->value.cols());
            d.row(i) = out->grad_ref().transpose();
            pm->grad_ref() += d;
        });
    }
    return Tensor::wrap(n);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no rows given");
    const Eigen::Index d = val(rows[0], "stack_rows").rows();
    Matrix r(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Matrix& V = val(rows[i], "stack_rows");
        require_vector(V, "stack_rows");
        if (V.rows() != d)
            throw ShapeError("stack_rows: row " + std::to_string(i) + " is " +
                             shape_of(V) + ", expected " + std::to_string(d) +
                             "x1");
        r.row(static_cast<Eigen::Index>(i)) = V.transpose();
    }
    auto n = fresh(r);
    bool track = false;
    for (const Tensor& t : rows)
        if (g_grad_enabled && t.node()->wants_grad()) track = true;
    if (track) {
        n->tracked = true;
        std::vector<Node*> ps;
        ps.reserve(rows.size());
        for (const Tensor& t : rows) {
            n->parents.push_back(t.node());
            ps.push_back(t.node().get());
        }
        Node* out = n.get();
        n->backward_fn = [ps, out] {
            const Matrix& g = out->grad_ref();
            for (std::size_t i = 0; i < ps.size(); ++i)
                accum(ps[i],
                      g.row(static_cast<Eigen::Index>(i)).transpose());
        };
    }
    return Tensor::wrap(n);
}

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& x) {
    const Matrix& X = val(x, "sum");
    Matrix r(1, 1);
    r(0, 0) = X.sum();
    auto n = fresh(r);
    if (track_any({&x})) {
        Node* px = x.node().get();
        Node* out = n.get();
        attach(n, {x}, [px, out] {
            accum(px, Matrix::Constant(px->value.rows(), px->value.cols(),
                                       out->grad_ref()(0, 0)));
        });
    }
    return Tensor::wrap(n);
}

Tensor mean(const Tensor& x) {
    const Matrix& X = val(x, "mean");
    return sum(x) / static_cast<double>(X.size());
}

Tensor mean_rows(const Tensor& m) {
    const Matrix& M = val(m, "mean_rows");
    if (M.rows() < 1) throw ShapeError("mean_rows: empty matrix");
    auto n = fresh(Matrix(M.colwise().mean().transpose()));
    if (track_any({&m})) {
        Node* pm = m.node().get();
        Node* out = n.get();
        attach(n, {m}, [pm, out] {
            const Matrix& g = out->grad_ref();  // d x 1
            const double k = static_cast<double>(pm->value.rows());
            accum(pm, (g.transpose() / k).replicate(pm->value.rows(), 1));
        });
    }
    return Tensor::wrap(n);
}

Tensor cross_entropy_with_logits(const Tensor& logits, int label) {
    const Matrix& X = val(logits, "cross_entropy");
    require_vector(X, "cross_entropy");
    if (label < 0 || label >= X.rows())
        throw IndexError("cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(X.rows()) +
                         " classes");
    const double mx = X.maxCoeff();
    const Eigen::ArrayXd z = X.col(0).array() - mx;
    const double lse = std::log(z.exp().sum());
    Matrix r(1, 1);
    r(0, 0) = lse - z(label);
    auto n = fresh(r);
    if (track_any({&logits})) {
        Node* px = logits.node().get();
        Node* out = n.get();
        attach(n, {logits}, [px, label, out] {
            const Eigen::ArrayXd zz =
                px->value.col(0).array() - px->value.maxCoeff();
            const Eigen::ArrayXd e = zz.exp();
            Matrix p = (e / e.sum()).matrix();
            p(label, 0) -= 1.0;
            accum(px, out->grad_ref()(0, 0) * p);
        });
    }
    return Tensor::wrap(n);
}

// ---- tape ----------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.valid()) throw Error("backward: null tensor handle");
    if (!loss.is_scalar())
        throw ShapeError("backward: loss must be scalar, got " +
                         shape_of(loss.value()));
    Node* root = loss.node().get();
    if (!root->tracked)
        throw Error("backward: loss is not part of a recorded tape "
                    "(created under NoGradGuard, or no input requires grad)");

    // Iterative DFS post-order; reversed it is a topological order with
    // every node ahead of all its inputs.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->tracked && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_ref() += Matrix::Ones(1, 1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

void zero_grads(const std::vector<Tensor>& tensors) {
    for (const Tensor& t : tensors) {
        if (t.valid()) t.node()->grad.resize(0, 0);
    }
}

} // namespace mmg
