#include "kfuse/edmd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kfuse::edmd {

GramPair accumulate(const measurements::MeasurementDataset& dataset,
                    const dict::Dictionary& dic) {
    dataset.validate();
    const int K = dic.size();
    GramPair gp;
    gp.G = Eigen::MatrixXd::Zero(K, K);
    gp.A = Eigen::MatrixXd::Zero(K, K);

    dict::SparsePsi px, py;
    for (Eigen::Index m = 0; m < dataset.x.rows(); ++m) {
        try {
            dic.evaluate(dataset.x.row(m).transpose(), px);
            dic.evaluate(dataset.y.row(m).transpose(), py);
        } catch (const OutOfCoverageError& e) {
            throw OutOfCoverageError("snapshot " + std::to_string(m) + ": " + e.what());
        }
        for (size_t i = 0; i < px.index.size(); ++i) {
            const int gi = px.index[i];
            const double vi = px.value[i];
            double* grow = gp.G.data() + gi;  // column-major, stride K
            for (size_t j = 0; j < px.index.size(); ++j)
                grow[static_cast<long>(px.index[j]) * K] += vi * px.value[j];
            double* arow = gp.A.data() + gi;
            for (size_t j = 0; j < py.index.size(); ++j)
                arow[static_cast<long>(py.index[j]) * K] += vi * py.value[j];
        }
        ++gp.m_count;
    }
    return gp;
}

namespace {

// Eigenpairs of G in descending order, truncated at svd_tol * max.
struct TruncatedGram {
    Eigen::MatrixXd V;   // K x r
    Eigen::VectorXd ev;  // r, descending positive
};

TruncatedGram truncate_gram(const Eigen::MatrixXd& G, double svd_tol) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    if (es.info() != Eigen::Success) throw NumericalError("gram eigendecomposition failed");
    const Eigen::Index K = G.rows();
    const double emax = es.eigenvalues().maxCoeff();
    if (!(emax > 0.0)) throw NumericalError("gram matrix is numerically zero");
    const double cut = svd_tol * emax;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = K - 1; i >= 0; --i)
        if (es.eigenvalues()[i] > cut) keep.push_back(i);
    TruncatedGram tg;
    tg.V.resize(K, static_cast<Eigen::Index>(keep.size()));
    tg.ev.resize(static_cast<Eigen::Index>(keep.size()));
    for (size_t i = 0; i < keep.size(); ++i) {
        tg.V.col(static_cast<Eigen::Index>(i)) = es.eigenvectors().col(keep[i]);
        tg.ev[static_cast<Eigen::Index>(i)] = es.eigenvalues()[keep[i]];
    }
    return tg;
}

// Unit norm, largest-magnitude entry rotated to the positive real axis, then
// sorted by |mu| descending (ties: Im >= 0 first, then Im, then Re descending).
void normalize_and_sort(Eigen::VectorXcd& mu, Eigen::MatrixXcd& xi) {
    const Eigen::Index n = mu.size();
    for (Eigen::Index k = 0; k < n; ++k) {
        xi.col(k).normalize();
        Eigen::Index imax = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < xi.rows(); ++i) {
            const double a = std::abs(xi(i, k));
            if (a > best + 1e-15) {
                best = a;
                imax = i;
            }
        }
        if (best > 0.0) xi.col(k) *= std::conj(xi(imax, k)) / std::abs(xi(imax, k));
    }
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const double ma = std::abs(mu[a]), mb = std::abs(mu[b]);
        if (ma != mb) return ma > mb;
        const bool pa = mu[a].imag() >= 0.0, pb = mu[b].imag() >= 0.0;
        if (pa != pb) return pa;
        if (mu[a].imag() != mu[b].imag()) return mu[a].imag() > mu[b].imag();
        return mu[a].real() > mu[b].real();
    });
    Eigen::VectorXcd mu2(n);
    Eigen::MatrixXcd xi2(xi.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        mu2[i] = mu[order[i]];
        xi2.col(i) = xi.col(order[i]);
    }
    mu = std::move(mu2);
    xi = std::move(xi2);
}

Eigen::VectorXcd lambdas_from_mu(const Eigen::VectorXcd& mu, double dt) {
    Eigen::VectorXcd lam(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        lam[i] = (mu[i] == std::complex<double>(0.0, 0.0))
                     ? std::complex<double>(-std::numeric_limits<double>::infinity(), 0.0)
                     : continuous_eigenvalue(mu[i], dt);
    return lam;
}

}  // namespace

Eigen::MatrixXd koopman_matrix(const GramPair& gp, double svd_tol, int* rank_used) {
    if (gp.G.rows() != gp.G.cols() || gp.A.rows() != gp.A.cols() || gp.G.rows() != gp.A.rows())
        throw ValidationError("koopman_matrix: G/A shape mismatch");
    TruncatedGram tg = truncate_gram(gp.G, svd_tol);
    if (rank_used) *rank_used = static_cast<int>(tg.ev.size());
    return tg.V * tg.ev.cwiseInverse().asDiagonal() * (tg.V.transpose() * gp.A);
}

KoopmanDecomposition eigendecompose(const Eigen::MatrixXd& koopman, double dt,
                                    std::shared_ptr<const dict::Dictionary> dictionary) {
    if (!(dt > 0.0)) throw ValidationError("eigendecompose: dt must be > 0");
    if (!koopman.allFinite()) throw ValidationError("eigendecompose: non-finite matrix");
    Eigen::EigenSolver<Eigen::MatrixXd> es(koopman);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver did not converge");

    KoopmanDecomposition dec;
    dec.mu = es.eigenvalues();
    dec.xi = es.eigenvectors();
    normalize_and_sort(dec.mu, dec.xi);
    dec.lambda = lambdas_from_mu(dec.mu, dt);
    dec.dictionary = std::move(dictionary);
    dec.dt = dt;
    dec.svd_rank_used = static_cast<int>(koopman.rows());
    return dec;
}

KoopmanDecomposition decompose(const GramPair& gp, double svd_tol, double dt,
                               std::shared_ptr<const dict::Dictionary> dictionary) {
    if (!(dt > 0.0)) throw ValidationError("decompose: dt must be > 0");
    TruncatedGram tg = truncate_gram(gp.G, svd_tol);
    const Eigen::Index r = tg.ev.size();

    // Eigenpairs of pinv(G)*A with mu != 0 live in range(V); the reduced
    // r x r problem B = D^-1 V^T A V shares them exactly.
    Eigen::MatrixXd B =
        tg.ev.cwiseInverse().asDiagonal() * (tg.V.transpose() * gp.A * tg.V);
    Eigen::EigenSolver<Eigen::MatrixXd> es(B);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver did not converge");

    KoopmanDecomposition dec;
    dec.mu = es.eigenvalues();
    dec.xi = tg.V * es.eigenvectors();
    normalize_and_sort(dec.mu, dec.xi);
    dec.lambda = lambdas_from_mu(dec.mu, dt);
    dec.dictionary = std::move(dictionary);
    dec.dt = dt;
    dec.svd_rank_used = static_cast<int>(r);
    return dec;
}

std::complex<double> continuous_eigenvalue(std::complex<double> mu, double dt) {
    if (!(dt > 0.0)) throw ValidationError("continuous_eigenvalue: dt must be > 0");
    if (mu == std::complex<double>(0.0, 0.0))
        throw ValidationError("continuous_eigenvalue: mu = 0 has no finite logarithm");
    return std::log(mu) / dt;
}

std::complex<double> eval_eigenfunction(const Eigen::VectorXd& x, int k,
                                        const KoopmanDecomposition& dec) {
    if (!dec.dictionary) throw ValidationError("eval_eigenfunction: decomposition has no dictionary");
    if (k < 0 || k >= dec.count())
        throw ValidationError("eval_eigenfunction: tuple index out of range");
    dict::SparsePsi psi;
    dec.dictionary->evaluate(x, psi);
    return psi.dot(dec.xi.col(k));
}

}  // namespace kfuse::edmd
