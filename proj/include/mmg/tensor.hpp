#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mmg {

// All numeric storage is 64-bit float, row-major.  Double precision is
// non-negotiable here: the whole test strategy leans on central finite
// differences with h = 1e-6, which is meaningless in float32.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace detail {

struct TensorNode {
    Matrix value;
    Matrix grad;  // empty (0x0) until first needed
    bool requires_grad = false;   // leaf the caller wants gradients for
    bool tracked = false;         // participates in the recorded tape
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Propagates this node's grad into its parents' grads.  Only set on
    // tracked non-leaf nodes.
    std::function<void()> backward_fn;

    Matrix& grad_ref() {
        if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
        return grad;
    }
    bool wants_grad() const { return requires_grad || tracked; }
};

} // namespace detail

// Handle to a node of the computation tape.  Copying a Tensor copies the
// handle, not the data — two copies alias the same value and gradient.
// Shapes are plain 2-D: a scalar is 1x1, a vector is nx1 (column), and a
// matrix is whatever it says it is.  No broadcasting except where an op
// documents it.
class Tensor {
public:
    Tensor() = default;  // null handle; most ops reject it

    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor vector(const Vector& v, bool requires_grad = false);
    static Tensor matrix(const Matrix& m, bool requires_grad = false);
    static Tensor zeros(Eigen::Index rows, Eigen::Index cols,
                        bool requires_grad = false);

    bool valid() const { return static_cast<bool>(node_); }

    const Matrix& value() const;
    // Mutable access to a leaf's value; used by the optimizer to apply
    // updates in place.  Calling this on a non-leaf is a logic error the
    // tape cannot detect, so it is gated to nodes without parents.
    Matrix& leaf_value();

    const Matrix& grad() const;   // zeros if backward never reached it
    bool has_grad() const;
    void zero_grad();

    bool requires_grad() const;
    bool tracked() const;

    Eigen::Index rows() const;
    Eigen::Index cols() const;
    Eigen::Index size() const { return rows() * cols(); }
    bool is_scalar() const { return rows() == 1 && cols() == 1; }
    bool is_vector() const { return cols() == 1; }

    // Value of a 1x1 tensor as a plain double.
    double item() const;

    // Deep copy: fresh leaf with the same value, no tape history.
    Tensor detached_copy(bool requires_grad) const;

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

    // Internal: adopt an existing node.  Ops use this; application code
    // should never need it.
    static Tensor wrap(std::shared_ptr<detail::TensorNode> n) {
        return Tensor(std::move(n));
    }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n)
        : node_(std::move(n)) {}
    std::shared_ptr<detail::TensorNode> node_;
};

// While a guard is alive on this thread, no tape is recorded: every op
// produces plain untracked values.  Used for evaluation and for the
// finite-difference re-evaluations in gradient checks.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// ---- arithmetic ----------------------------------------------------------

Tensor operator+(const Tensor& a, const Tensor& b);  // same shape
Tensor operator-(const Tensor& a, const Tensor& b);
// Elementwise product when shapes match; if exactly one operand is 1x1 it
// broadcasts as a scalar factor.
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);  // elementwise
Tensor operator-(const Tensor& a);

Tensor operator+(const Tensor& a, double c);
Tensor operator+(double c, const Tensor& a);
Tensor operator-(const Tensor& a, double c);
Tensor operator-(double c, const Tensor& a);
Tensor operator*(const Tensor& a, double c);
Tensor operator*(double c, const Tensor& a);
Tensor operator/(const Tensor& a, double c);

// Scalar-tensor broadcast product, s is 1x1.  Same as operator* with a
// scalar operand, but self-documenting at call sites.
Tensor scale(const Tensor& x, const Tensor& s);

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor dot(const Tensor& u, const Tensor& v);   // vectors, scalar result
Tensor norm(const Tensor& u);                   // Euclidean norm, scalar

enum class ZeroNormPolicy {
    Error,       // throw ZeroNormError
    ReturnZero,  // produce constant 0 with no gradient path
};

// cos(u, v) = u.v / (|u| |v|).  Norms below 1e-12 trigger the policy;
// the gradient at a ReturnZero fallback is defined as zero.
Tensor cosine_sim(const Tensor& u, const Tensor& v,
                  ZeroNormPolicy policy = ZeroNormPolicy::Error);

// ---- nonlinearities ------------------------------------------------------

Tensor relu(const Tensor& x);
// max(x, slope*x); the subgradient at 0 is taken as slope.
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);

// Softmax over a vector, stabilized by max subtraction.
Tensor softmax(const Tensor& logits);
// Softmax over the unmasked entries only; masked entries are exactly 0 in
// the output and receive no gradient.  Throws IsolatedNodeError when the
// mask is empty.
Tensor masked_softmax(const Tensor& logits, const std::vector<char>& mask);
// Row-wise softmax of a matrix.
Tensor softmax_rows(const Tensor& m);

// ---- shape surgery -------------------------------------------------------

Tensor concat(const Tensor& u, const Tensor& v);          // vectors
Tensor slice(const Tensor& u, Eigen::Index start, Eigen::Index len);
Tensor element(const Tensor& u, Eigen::Index i);          // vector -> scalar
Tensor row(const Tensor& m, Eigen::Index i);              // matrix row as column vector
// Rows of the result are the given column vectors, transposed: k inputs of
// shape dx1 produce a kxd matrix.  Scalars stack into a kx1 vector.
Tensor stack_rows(const std::vector<Tensor>& rows);

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& x);        // scalar
Tensor mean(const Tensor& x);       // scalar
Tensor mean_rows(const Tensor& m);  // mean of the rows of a kxd matrix -> dx1

// Fused -log softmax(logits)[label]; the backward is the textbook
// (softmax - onehot), which is far better conditioned than composing
// log/softmax/index ops.
Tensor cross_entropy_with_logits(const Tensor& logits, int label);

// ---- tape ----------------------------------------------------------------

// Reverse-mode sweep from a scalar loss.  Gradients accumulate into every
// tensor with requires_grad reachable from the loss; repeated calls keep
// accumulating until zero_grads.
void backward(const Tensor& loss);

void zero_grads(const std::vector<Tensor>& tensors);

} // namespace mmg
