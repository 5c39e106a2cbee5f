#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "genadapt/kernels.hpp"
#include "genadapt/svd.hpp"

namespace genadapt {

class Tape;

// One matrix-valued node of a define-by-run graph. Creation order is a
// topological order, so the backward sweep visits each node exactly once.
struct TapeNode {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_set = false;
    std::function<void(TapeNode&)> backward;
    int id = 0;
};

using NodeRef = TapeNode*;

namespace detail {

inline void accumulate(NodeRef p, const Matrix& delta) {
    if (!p->requires_grad) return;
    if (!p->grad_set) {
        p->grad = delta;
        p->grad_set = true;
    } else {
        p->grad = add(p->grad, delta);
    }
}

}  // namespace detail

// Owns the nodes of one forward computation. Single-owner: a tape and its
// node graph must not be shared across threads.
class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    NodeRef leaf(Matrix value, bool requires_grad = false) {
        NodeRef n = make(std::move(value));
        n->requires_grad = grad_enabled_ && requires_grad;
        return n;
    }

    NodeRef constant(Matrix value) { return leaf(std::move(value), false); }

    NodeRef add(NodeRef a, NodeRef b) {
        NodeRef n = make(genadapt::add(a->value, b->value));
        if (track(n, {a, b}))
            n->backward = [a, b](TapeNode& self) {
                detail::accumulate(a, self.grad);
                detail::accumulate(b, self.grad);
            };
        return n;
    }

    NodeRef sub(NodeRef a, NodeRef b) {
        NodeRef n = make(genadapt::sub(a->value, b->value));
        if (track(n, {a, b}))
            n->backward = [a, b](TapeNode& self) {
                detail::accumulate(a, self.grad);
                detail::accumulate(b, genadapt::scale(self.grad, -1.0));
            };
        return n;
    }

    NodeRef scale(NodeRef a, double s) {
        NodeRef n = make(genadapt::scale(a->value, s));
        if (track(n, {a}))
            n->backward = [a, s](TapeNode& self) {
                detail::accumulate(a, genadapt::scale(self.grad, s));
            };
        return n;
    }

    NodeRef matmul(NodeRef a, NodeRef b) {
        NodeRef n = make(genadapt::matmul(a->value, b->value));
        if (track(n, {a, b}))
            n->backward = [a, b](TapeNode& self) {
                if (a->requires_grad)
                    detail::accumulate(
                        a, genadapt::matmul(self.grad,
                                            genadapt::transpose(b->value)));
                if (b->requires_grad)
                    detail::accumulate(
                        b, genadapt::matmul(genadapt::transpose(a->value),
                                            self.grad));
            };
        return n;
    }

    NodeRef transpose(NodeRef a) {
        NodeRef n = make(genadapt::transpose(a->value));
        if (track(n, {a}))
            n->backward = [a](TapeNode& self) {
                detail::accumulate(a, genadapt::transpose(self.grad));
            };
        return n;
    }

    NodeRef hadamard(NodeRef a, NodeRef b) {
        if (!a->value.same_shape(b->value))
            throw DimensionError("hadamard: " +
                                 shape_str(a->value.rows(), a->value.cols()) +
                                 " vs " +
                                 shape_str(b->value.rows(), b->value.cols()));
        NodeRef n = make(Matrix(
            EMat(a->value.em().cwiseProduct(b->value.em())),
            promote(a->value.precision(), b->value.precision())));
        if (track(n, {a, b}))
            n->backward = [a, b](TapeNode& self) {
                if (a->requires_grad)
                    detail::accumulate(
                        a, Matrix(EMat(self.grad.em().cwiseProduct(
                                      b->value.em())),
                                  self.grad.precision()));
                if (b->requires_grad)
                    detail::accumulate(
                        b, Matrix(EMat(self.grad.em().cwiseProduct(
                                      a->value.em())),
                                  self.grad.precision()));
            };
        return n;
    }

    // Stops gradient flow; used by the truncated-unroll training mode.
    NodeRef detach(NodeRef a) { return constant(a->value); }

    NodeRef col_slice(NodeRef a, Eigen::Index start, Eigen::Index count) {
        if (start < 0 || start + count > a->value.cols())
            throw DimensionError("col_slice out of range");
        NodeRef n = make(Matrix(EMat(a->value.em().middleCols(start, count)),
                                a->value.precision()));
        if (track(n, {a}))
            n->backward = [a, start, count](TapeNode& self) {
                Matrix d = Matrix::zeros(a->value.rows(), a->value.cols(),
                                         self.grad.precision());
                d.em().middleCols(start, count) = self.grad.em();
                detail::accumulate(a, d);
            };
        return n;
    }

    NodeRef col_concat(const std::vector<NodeRef>& parts) {
        Eigen::Index cols = 0;
        for (NodeRef p : parts) cols += p->value.cols();
        const Eigen::Index rows = parts.empty() ? 0 : parts[0]->value.rows();
        Matrix v(rows, cols);
        Eigen::Index at = 0;
        Precision prec = Precision::f32;
        for (NodeRef p : parts) {
            if (p->value.rows() != rows)
                throw DimensionError("col_concat: row mismatch");
            v.em().middleCols(at, p->value.cols()) = p->value.em();
            at += p->value.cols();
            prec = promote(prec, p->value.precision());
        }
        NodeRef n = make(v.to(prec));
        if (track(n, parts)) {
            std::vector<NodeRef> ps = parts;
            n->backward = [ps](TapeNode& self) {
                Eigen::Index at = 0;
                for (NodeRef p : ps) {
                    detail::accumulate(
                        p, Matrix(EMat(self.grad.em().middleCols(
                                      at, p->value.cols())),
                                  self.grad.precision()));
                    at += p->value.cols();
                }
            };
        }
        return n;
    }

    // Row gather from an embedding table; backward scatter-adds.
    NodeRef embedding(NodeRef table, std::vector<int> ids) {
        const Eigen::Index rows = static_cast<Eigen::Index>(ids.size());
        Matrix v(rows, table->value.cols(), table->value.precision());
        for (Eigen::Index i = 0; i < rows; ++i) {
            const int id = ids[static_cast<std::size_t>(i)];
            if (id < 0 || id >= table->value.rows())
                throw DimensionError("embedding: token id " +
                                     std::to_string(id) + " out of range");
            v.em().row(i) = table->value.em().row(id);
        }
        NodeRef n = make(std::move(v));
        if (track(n, {table})) {
            n->backward = [table, ids = std::move(ids)](TapeNode& self) {
                Matrix d = Matrix::zeros(table->value.rows(),
                                         table->value.cols(),
                                         self.grad.precision());
                for (Eigen::Index i = 0; i < self.grad.rows(); ++i)
                    d.em().row(ids[static_cast<std::size_t>(i)]) +=
                        self.grad.em().row(i);
                detail::accumulate(table, d);
            };
        }
        return n;
    }

    // y_ij = x_ij * w_j / rms_i with rms_i = sqrt(mean_j x_ij^2 + eps).
    NodeRef rmsnorm(NodeRef x, NodeRef w, double eps = 1e-6) {
        const Eigen::Index rows = x->value.rows();
        const Eigen::Index d = x->value.cols();
        if (w->value.rows() != 1 || w->value.cols() != d)
            throw DimensionError("rmsnorm: weight must be 1x" +
                                 std::to_string(d));
        Eigen::VectorXd inv(rows);
        for (Eigen::Index i = 0; i < rows; ++i)
            inv(i) = 1.0 / std::sqrt(x->value.em().row(i).squaredNorm() /
                                         static_cast<double>(d) +
                                     eps);
        Matrix v(rows, d, promote(x->value.precision(), w->value.precision()));
        for (Eigen::Index i = 0; i < rows; ++i)
            v.em().row(i) = x->value.em().row(i).cwiseProduct(
                                w->value.em().row(0)) *
                            inv(i);
        v.round_to_precision();
        v.check_finite("rmsnorm");
        NodeRef n = make(std::move(v));
        if (track(n, {x, w}))
            n->backward = [x, w, inv, d](TapeNode& self) {
                if (x->requires_grad) {
                    Matrix dx(x->value.rows(), d, self.grad.precision());
                    for (Eigen::Index i = 0; i < x->value.rows(); ++i) {
                        const auto xi = x->value.em().row(i);
                        const auto gi = self.grad.em().row(i);
                        const auto wr = w->value.em().row(0);
                        const double dot = gi.cwiseProduct(wr).dot(xi);
                        dx.em().row(i) =
                            gi.cwiseProduct(wr) * inv(i) -
                            xi * (dot * inv(i) * inv(i) * inv(i) /
                                  static_cast<double>(d));
                    }
                    detail::accumulate(x, dx);
                }
                if (w->requires_grad) {
                    Matrix dw(1, d, self.grad.precision());
                    for (Eigen::Index i = 0; i < x->value.rows(); ++i)
                        dw.em().row(0) += self.grad.em().row(i).cwiseProduct(
                                              x->value.em().row(i)) *
                                          inv(i);
                    detail::accumulate(w, dw);
                }
            };
        return n;
    }

    // Rotary position mixing on consecutive column pairs; `offset` is the
    // position of the first row. An orthogonal per-row map, so the backward
    // pass applies the inverse rotation to the gradient.
    NodeRef rotary(NodeRef x, Eigen::Index offset = 0, double base = 10000.0) {
        const Eigen::Index rows = x->value.rows();
        const Eigen::Index d = x->value.cols();
        if (d % 2 != 0) throw DimensionError("rotary: odd dimension");
        Matrix v(rows, d, x->value.precision());
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double pos = static_cast<double>(i + offset);
            for (Eigen::Index k = 0; k < d / 2; ++k) {
                const double theta =
                    pos * std::pow(base, -2.0 * static_cast<double>(k) /
                                             static_cast<double>(d));
                const double c = std::cos(theta), s = std::sin(theta);
                const double a = x->value(i, 2 * k), b = x->value(i, 2 * k + 1);
                v(i, 2 * k) = a * c - b * s;
                v(i, 2 * k + 1) = a * s + b * c;
            }
        }
        v.round_to_precision();
        NodeRef n = make(std::move(v));
        if (track(n, {x}))
            n->backward = [x, offset, base, d](TapeNode& self) {
                Matrix dx(self.grad.rows(), d, self.grad.precision());
                for (Eigen::Index i = 0; i < self.grad.rows(); ++i) {
                    const double pos = static_cast<double>(i + offset);
                    for (Eigen::Index k = 0; k < d / 2; ++k) {
                        const double theta =
                            pos * std::pow(base, -2.0 * static_cast<double>(k) /
                                                     static_cast<double>(d));
                        const double c = std::cos(theta), s = std::sin(theta);
                        const double ga = self.grad(i, 2 * k);
                        const double gb = self.grad(i, 2 * k + 1);
                        dx(i, 2 * k) = ga * c + gb * s;
                        dx(i, 2 * k + 1) = -ga * s + gb * c;
                    }
                }
                detail::accumulate(x, dx);
            };
        return n;
    }

    NodeRef silu(NodeRef x) {
        Matrix v(x->value.rows(), x->value.cols(), x->value.precision());
        v.em() = x->value.em().unaryExpr(
            [](double a) { return a / (1.0 + std::exp(-a)); });
        v.round_to_precision();
        NodeRef n = make(std::move(v));
        if (track(n, {x}))
            n->backward = [x](TapeNode& self) {
                Matrix dx(x->value.rows(), x->value.cols(),
                          self.grad.precision());
                dx.em() = self.grad.em().cwiseProduct(
                    x->value.em().unaryExpr([](double a) {
                        const double sig = 1.0 / (1.0 + std::exp(-a));
                        return sig * (1.0 + a * (1.0 - sig));
                    }));
                detail::accumulate(x, dx);
            };
        return n;
    }

    // Row-wise softmax over the causal prefix (columns j <= i); columns
    // beyond the diagonal get probability zero. Input must be square.
    NodeRef causal_softmax(NodeRef scores) {
        const Eigen::Index m = scores->value.rows();
        if (scores->value.cols() != m)
            throw DimensionError("causal_softmax: non-square scores");
        Matrix v(m, m, scores->value.precision());
        for (Eigen::Index i = 0; i < m; ++i) {
            double mx = scores->value(i, 0);
            for (Eigen::Index j = 1; j <= i; ++j)
                mx = std::max(mx, scores->value(i, j));
            double z = 0.0;
            for (Eigen::Index j = 0; j <= i; ++j)
                z += std::exp(scores->value(i, j) - mx);
            for (Eigen::Index j = 0; j <= i; ++j)
                v(i, j) = std::exp(scores->value(i, j) - mx) / z;
        }
        v.round_to_precision();
        v.check_finite("causal_softmax");
        NodeRef n = make(std::move(v));
        if (track(n, {scores}))
            n->backward = [scores, m](TapeNode& self) {
                // self.value holds the probabilities.
                Matrix ds(m, m, self.grad.precision());
                const TapeNode* out =
                    static_cast<const TapeNode*>(&self);
                for (Eigen::Index i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (Eigen::Index j = 0; j <= i; ++j)
                        dot += self.grad(i, j) * out->value(i, j);
                    for (Eigen::Index j = 0; j <= i; ++j)
                        ds(i, j) =
                            out->value(i, j) * (self.grad(i, j) - dot);
                }
                detail::accumulate(scores, ds);
            };
        return n;
    }

    // Mean negative log-likelihood of `targets` under row-wise softmax of
    // the logits; masked-out rows contribute nothing. Returns a 1x1 node.
    NodeRef cross_entropy_mean(NodeRef logits, const std::vector<int>& targets,
                               const std::vector<bool>& mask) {
        const Eigen::Index rows = logits->value.rows();
        if (static_cast<Eigen::Index>(targets.size()) != rows ||
            static_cast<Eigen::Index>(mask.size()) != rows)
            throw DimensionError("cross_entropy_mean: " +
                                 std::to_string(targets.size()) +
                                 " targets for " + std::to_string(rows) +
                                 " rows");
        Eigen::Index active = 0;
        for (bool b : mask) active += b ? 1 : 0;
        if (active == 0)
            throw DataError("cross_entropy_mean: empty target mask");

        double total = 0.0;
        for (Eigen::Index i = 0; i < rows; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) continue;
            const auto row = logits->value.em().row(i);
            const double mx = row.maxCoeff();
            const double lse =
                mx + std::log((row.array() - mx).exp().sum());
            total += lse - row(targets[static_cast<std::size_t>(i)]);
        }
        Matrix v(1, 1, logits->value.precision());
        v(0, 0) = total / static_cast<double>(active);
        v.check_finite("cross_entropy_mean");
        NodeRef n = make(std::move(v));
        if (track(n, {logits})) {
            n->backward = [logits, targets, mask, active](TapeNode& self) {
                const double g = self.grad(0, 0) / static_cast<double>(active);
                Matrix dl(logits->value.rows(), logits->value.cols(),
                          self.grad.precision());
                for (Eigen::Index i = 0; i < logits->value.rows(); ++i) {
                    if (!mask[static_cast<std::size_t>(i)]) continue;
                    const auto row = logits->value.em().row(i);
                    const double mx = row.maxCoeff();
                    Eigen::RowVectorXd p = (row.array() - mx).exp();
                    p /= p.sum();
                    dl.em().row(i) = p * g;
                    dl(i, targets[static_cast<std::size_t>(i)]) -= g;
                }
                detail::accumulate(logits, dl);
            };
        }
        return n;
    }

    // norm(M) = U V^T with the top `rank` singular directions kept. The
    // forward pass runs the randomized range finder; all sketched triplets
    // are retained for the backward pass, which needs the couplings between
    // kept and discarded directions.
    NodeRef svd_normalize(NodeRef m, Eigen::Index rank,
                          int power_iterations = kDefaultPowerIterations,
                          std::uint64_t seed = kSketchSeed) {
        if (rank < 1 || rank > std::min(m->value.rows(), m->value.cols()))
            throw RankError("svd_normalize: rank " + std::to_string(rank) +
                            " out of range for " +
                            shape_str(m->value.rows(), m->value.cols()));
        auto svd = std::make_shared<SvdResult>(detail_range_finder(
            m->value, rank, power_iterations, seed));
        const std::vector<Eigen::Index> kept = retained_directions(*svd, rank);
        EMat prod = EMat::Zero(m->value.rows(), m->value.cols());
        for (Eigen::Index i : kept)
            prod += svd->left_vectors.em().col(i) *
                    svd->right_vectors.em().col(i).transpose();
        NodeRef n = make(Matrix(std::move(prod), m->value.precision()));
        if (track(n, {m}))
            n->backward = [m, svd, rank](TapeNode& self) {
                detail::accumulate(m, svd_backward(*svd, self.grad, rank));
            };
        return n;
    }

    NodeRef frobenius_normalize(NodeRef m) {
        const double norm = m->value.frobenius_norm();
        if (norm < 1e-12) {
            // Guard region: constant zero, no gradient flows.
            return constant(Matrix::zeros(m->value.rows(), m->value.cols(),
                                          m->value.precision()));
        }
        NodeRef n = make(genadapt::scale(m->value, 1.0 / norm));
        if (track(n, {m}))
            n->backward = [m, norm](TapeNode& self) {
                const double dot =
                    (self.grad.em().array() * m->value.em().array()).sum();
                Matrix dm(EMat(self.grad.em() / norm -
                               m->value.em() * (dot / (norm * norm * norm))),
                          self.grad.precision());
                detail::accumulate(m, dm);
            };
        return n;
    }

    // Seeds the root gradient with 1 and sweeps the graph in reverse
    // creation order (a topological order for define-by-run graphs).
    void backward(NodeRef root) {
        if (root->value.rows() != 1 || root->value.cols() != 1)
            throw DimensionError("backward: root must be 1x1, got " +
                                 shape_str(root->value.rows(),
                                           root->value.cols()));
        if (!root->requires_grad) return;
        Matrix one(1, 1, root->value.precision());
        one(0, 0) = 1.0;
        root->grad = one;
        root->grad_set = true;
        for (int i = root->id; i >= 0; --i) {
            TapeNode& n = *nodes_[static_cast<std::size_t>(i)];
            if (n.grad_set && n.backward) n.backward(n);
        }
    }

    Matrix grad_of(NodeRef leaf) const {
        if (!leaf->grad_set)
            return Matrix::zeros(leaf->value.rows(), leaf->value.cols(),
                                 leaf->value.precision());
        return leaf->grad;
    }

    std::size_t node_count() const { return nodes_.size(); }

  private:
    static SvdResult detail_range_finder(const Matrix& m, Eigen::Index rank,
                                         int power_iterations,
                                         std::uint64_t seed) {
        return detail::range_finder_svd(m, detail::sketch_width(rank),
                                        power_iterations, seed);
    }

    NodeRef make(Matrix value) {
        nodes_.push_back(std::make_unique<TapeNode>());
        TapeNode& n = *nodes_.back();
        n.value = std::move(value);
        n.id = static_cast<int>(nodes_.size()) - 1;
        return &n;
    }

    // Marks the node as requiring grad when any parent does; returns
    // whether a backward closure should be installed.
    bool track(NodeRef n, const std::vector<NodeRef>& parents) {
        if (!grad_enabled_) return false;
        for (NodeRef p : parents) n->requires_grad |= p->requires_grad;
        return n->requires_grad;
    }

    std::vector<std::unique_ptr<TapeNode>> nodes_;
    bool grad_enabled_;
};

}  // namespace genadapt
