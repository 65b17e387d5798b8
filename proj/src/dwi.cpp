#include "cohortforge/dwi.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cohortforge/error.hpp"
#include "cohortforge/textio.hpp"

namespace cohortforge::dwi {

namespace {

std::vector<double> parse_number_row(const std::string& line, const char* code) {
    std::vector<double> values;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        auto v = parse_double(tok);
        if (!v) fail(code, "'" + tok + "' is not a number");
        values.push_back(*v);
    }
    return values;
}

std::vector<std::string> nonempty_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (!trim(line).empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace

GradientScheme read_bval_bvec(const std::string& bval_text, const std::string& bvec_text) {
    auto bval_lines = nonempty_lines(bval_text);
    if (bval_lines.size() != 1)
        fail("MALFORMED_BVAL", "expected one row of b-values, got " +
                                   std::to_string(bval_lines.size()));
    auto bvec_lines = nonempty_lines(bvec_text);
    if (bvec_lines.size() != 3)
        fail("MALFORMED_BVEC", "expected three rows (x, y, z), got " +
                                   std::to_string(bvec_lines.size()));

    GradientScheme scheme;
    scheme.bvals = parse_number_row(bval_lines[0], "MALFORMED_BVAL");
    std::array<std::vector<double>, 3> rows;
    for (int i = 0; i < 3; ++i) rows[i] = parse_number_row(bvec_lines[i], "MALFORMED_BVEC");
    if (rows[0].size() != rows[1].size() || rows[0].size() != rows[2].size() ||
        rows[0].size() != scheme.bvals.size())
        fail("COUNT_MISMATCH", "bval count " + std::to_string(scheme.bvals.size()) +
                                   " does not match bvec columns");

    for (size_t i = 0; i < scheme.bvals.size(); ++i) {
        double b = scheme.bvals[i];
        if (b < 0.0) fail("NEGATIVE_BVALUE", "b-value " + format_double(b));
        std::array<double, 3> g = {rows[0][i], rows[1][i], rows[2][i]};
        double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
        if (b > 0.0) {
            if (norm < 0.5 || norm > 2.0)
                fail("BAD_VECTOR_NORM", "gradient " + std::to_string(i) + " has norm " +
                                            format_double(norm));
            for (double& c : g) c /= norm;
        } else if (norm > 0.0 && std::abs(norm - 1.0) > 1e-3) {
            // b = 0 allows the zero vector; anything else must be unit.
            if (norm < 0.5 || norm > 2.0)
                fail("BAD_VECTOR_NORM", "b0 gradient " + std::to_string(i) + " has norm " +
                                            format_double(norm));
            for (double& c : g) c /= norm;
        }
        scheme.bvecs.push_back(g);
    }
    return scheme;
}

std::vector<Shell> group_shells(const std::vector<double>& bvals, double tol) {
    if (!(tol > 0.0)) fail("BAD_THRESHOLD", "shell tolerance must be > 0");
    std::vector<int> order(bvals.size());
    for (size_t i = 0; i < bvals.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return bvals[a] < bvals[b]; });

    std::vector<Shell> shells;
    double sum = 0.0;
    for (int idx : order) {
        double b = bvals[idx];
        if (!shells.empty()) {
            Shell& cur = shells.back();
            double n = static_cast<double>(cur.volumes.size());
            double mean_if_joined = (sum + b) / (n + 1.0);
            if (std::abs(b - mean_if_joined) <= tol) {
                cur.volumes.push_back(idx);
                sum += b;
                cur.b = mean_if_joined;
                continue;
            }
        }
        Shell s;
        s.volumes.push_back(idx);
        s.b = b;
        sum = b;
        shells.push_back(std::move(s));
    }
    return shells;
}

const Shell& select_shell(const std::vector<Shell>& shells, double target) {
    const Shell* best = nullptr;
    for (const auto& s : shells) {
        if (!(s.b > 0.0)) continue;
        if (!best) {
            best = &s;
            continue;
        }
        double d = std::abs(s.b - target);
        double bd = std::abs(best->b - target);
        if (d < bd || (d == bd && s.b < best->b)) best = &s;
    }
    if (!best) fail("NO_DWI_SHELL", "no shell with b > 0");
    return *best;
}

ShellSufficiency shell_sufficiency(const GradientScheme& scheme, double lo, double hi,
                                   int min_count) {
    ShellSufficiency r;
    for (double b : scheme.bvals)
        if (b >= lo && b <= hi) ++r.count;
    r.sufficient = r.count >= min_count;
    return r;
}

VoxelTensor fit_tensor_wls(std::span<const double> signals, const GradientScheme& scheme,
                           double b0_mean) {
    if (signals.size() != scheme.size())
        fail("COUNT_MISMATCH", "signal count does not match gradient scheme");

    const bool estimate_s0 = !(b0_mean > 0.0);
    std::vector<int> used;
    size_t n_weighted = 0;
    for (size_t i = 0; i < scheme.size(); ++i) {
        if (!(scheme.bvals[i] > 0.0)) continue;
        ++n_weighted;
        if (signals[i] > 0.0) used.push_back(static_cast<int>(i));
    }
    if (n_weighted > 0 && used.size() * 2 < n_weighted)
        fail("NONPOSITIVE_SIGNALS", "more than half of the weighted volumes have "
                                    "nonpositive signal", ErrorKind::runtime);

    const int unknowns = estimate_s0 ? 7 : 6;
    const int rows = static_cast<int>(used.size());
    if (rows < unknowns)
        fail("RANK_DEFICIENT", "tensor fit needs at least " + std::to_string(unknowns) +
                                   " weighted volumes, got " + std::to_string(rows));

    Eigen::MatrixXd X(rows, unknowns);
    Eigen::VectorXd y(rows);
    for (int r = 0; r < rows; ++r) {
        int i = used[r];
        double b = scheme.bvals[i];
        const auto& g = scheme.bvecs[i];
        double q[6] = {g[0] * g[0], g[1] * g[1], g[2] * g[2],
                       2.0 * g[0] * g[1], 2.0 * g[0] * g[2], 2.0 * g[1] * g[2]};
        if (estimate_s0) {
            X(r, 0) = 1.0;
            for (int c = 0; c < 6; ++c) X(r, c + 1) = -b * q[c];
            y(r) = std::log(signals[i]);
        } else {
            for (int c = 0; c < 6; ++c) X(r, c) = b * q[c];
            y(r) = std::log(b0_mean) - std::log(signals[i]);
        }
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < unknowns)
        fail("RANK_DEFICIENT", "gradient design spans only rank " +
                                   std::to_string(qr.rank()));
    Eigen::VectorXd coef = qr.solve(y);

    // One weighted refinement pass, weights = predicted signal squared.
    Eigen::VectorXd w(rows);
    for (int r = 0; r < rows; ++r) {
        double eta = X.row(r).dot(coef);
        double log_pred = estimate_s0 ? eta : std::log(b0_mean) - eta;
        double pred = std::exp(log_pred);
        w(r) = pred * pred;
    }
    Eigen::MatrixXd Xw = w.cwiseSqrt().asDiagonal() * X;
    Eigen::VectorXd yw = w.cwiseSqrt().asDiagonal() * y;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr2(Xw);
    qr2.setThreshold(1e-10);
    if (qr2.rank() == unknowns) coef = qr2.solve(yw);

    VoxelTensor t;
    int base = estimate_s0 ? 1 : 0;
    for (int c = 0; c < 6; ++c) t.D[c] = coef(base + c);
    t.s0 = estimate_s0 ? std::exp(coef(0)) : b0_mean;

    Eigen::Matrix3d D;
    D << t.D[0], t.D[3], t.D[4],
         t.D[3], t.D[1], t.D[5],
         t.D[4], t.D[5], t.D[2];
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(D);
    for (int i = 0; i < 3; ++i) t.eigenvalues[i] = es.eigenvalues()(2 - i);
    t.any_clamped = t.eigenvalues[2] < 0.0;
    t.lambda1_clamped = t.eigenvalues[0] < 0.0;
    return t;
}

double fa(double l1, double l2, double l3) {
    double mean = (l1 + l2 + l3) / 3.0;
    double num = (l1 - mean) * (l1 - mean) + (l2 - mean) * (l2 - mean) +
                 (l3 - mean) * (l3 - mean);
    double den = l1 * l1 + l2 * l2 + l3 * l3;
    if (den <= 0.0) return 0.0;
    double v = std::sqrt(1.5 * num / den);
    return std::min(v, 1.0);
}

double md(double l1, double l2, double l3) { return (l1 + l2 + l3) / 3.0; }

AggregateMetrics aggregate_metrics(const std::vector<double>& fa_map,
                                   const std::vector<double>& md_map,
                                   const Volume& tissue_mask,
                                   const std::array<double, 3>& voxel_size) {
    size_t n = tissue_mask.nvox_per_volume();
    if (fa_map.size() != n || md_map.size() != n)
        fail("DIMS_MISMATCH", "metric maps do not match mask dimensions");

    AggregateMetrics agg;
    double fa_sum = 0.0, md_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (!(tissue_mask.data[i] > 0.0)) continue;
        ++agg.n_mask_voxels;
        if (std::isnan(fa_map[i]) || std::isnan(md_map[i])) continue;
        ++agg.n_valid_voxels;
        fa_sum += fa_map[i];
        md_sum += md_map[i];
    }
    if (agg.n_mask_voxels == 0) fail("EMPTY_MASK", "tissue mask has no voxels set");
    agg.ticv = static_cast<double>(agg.n_mask_voxels) * voxel_size[0] * voxel_size[1] *
               voxel_size[2];
    if (agg.n_valid_voxels > 0) {
        agg.mean_fa = fa_sum / static_cast<double>(agg.n_valid_voxels);
        agg.mean_md = md_sum / static_cast<double>(agg.n_valid_voxels);
    }
    return agg;
}

SessionDwiMetrics compute_session_metrics(const Volume& dwi, const GradientScheme& scheme,
                                          const Volume& mask, const DwiConfig& config) {
    if (dwi.ndim != 4) fail("BAD_DIM", "DWI image must be 4D");
    size_t nvol = static_cast<size_t>(dwi.dims[3]);
    if (scheme.size() != nvol)
        fail("COUNT_MISMATCH", "gradient scheme has " + std::to_string(scheme.size()) +
                                   " entries for " + std::to_string(nvol) + " volumes");
    size_t nvox = dwi.nvox_per_volume();
    if (mask.nvox_per_volume() != nvox || mask.dims[0] != dwi.dims[0] ||
        mask.dims[1] != dwi.dims[1] || mask.dims[2] != dwi.dims[2])
        fail("DIMS_MISMATCH", "mask dimensions do not match DWI");

    SessionDwiMetrics out;
    auto suff = shell_sufficiency(scheme, config.shell_lo, config.shell_hi,
                                  config.min_shell_dirs);
    out.shell_sufficient = suff.sufficient;
    out.shell_count = suff.count;

    auto shells = group_shells(scheme.bvals, config.shell_tol);
    const Shell& shell = select_shell(shells, config.target_b);
    out.shell_b = shell.b;
    out.n_dirs_used = static_cast<int>(shell.volumes.size());

    // Sub-scheme: the selected shell plus the pooled b0 reference.
    GradientScheme sub;
    std::vector<int> shell_vols = shell.volumes;
    std::sort(shell_vols.begin(), shell_vols.end());
    for (int v : shell_vols) {
        sub.bvals.push_back(scheme.bvals[v]);
        sub.bvecs.push_back(scheme.bvecs[v]);
    }
    std::vector<int> b0_vols;
    for (size_t i = 0; i < scheme.size(); ++i)
        if (scheme.bvals[i] < config.b0_max) b0_vols.push_back(static_cast<int>(i));

    std::vector<double> fa_map(nvox, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> md_map(nvox, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> signals(sub.size());

    for (size_t vox = 0; vox < nvox; ++vox) {
        if (!(mask.data[vox] > 0.0)) continue;
        double b0_mean = 0.0;
        if (!b0_vols.empty()) {
            for (int v : b0_vols) b0_mean += dwi.data[static_cast<size_t>(v) * nvox + vox];
            b0_mean /= static_cast<double>(b0_vols.size());
        }
        bool ok = true;
        for (size_t s = 0; s < shell_vols.size(); ++s) {
            double v = dwi.data[static_cast<size_t>(shell_vols[s]) * nvox + vox];
            if (!(v > 0.0)) ok = false;
            signals[s] = v;
        }
        if (!ok || (!b0_vols.empty() && !(b0_mean > 0.0))) continue;
        VoxelTensor t;
        try {
            t = fit_tensor_wls(signals, sub, b0_vols.empty() ? 0.0 : b0_mean);
        } catch (const Error&) {
            continue;  // unfit voxel stays NaN in the maps
        }
        if (t.any_clamped) ++out.n_clamped_voxels;
        if (t.lambda1_clamped) continue;  // excluded from whole-brain means
        double l1 = std::max(t.eigenvalues[0], 0.0);
        double l2 = std::max(t.eigenvalues[1], 0.0);
        double l3 = std::max(t.eigenvalues[2], 0.0);
        fa_map[vox] = fa(l1, l2, l3);
        md_map[vox] = md(l1, l2, l3);
    }

    auto agg = aggregate_metrics(fa_map, md_map, mask, dwi.voxel_size);
    out.mean_fa = agg.mean_fa;
    out.mean_md = agg.mean_md;
    out.ticv = agg.ticv;
    out.n_mask_voxels = agg.n_mask_voxels;
    return out;
}

}  // namespace cohortforge::dwi
