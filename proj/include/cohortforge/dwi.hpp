#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cohortforge/nifti.hpp"

namespace cohortforge::dwi {

// Per-volume b-values and unit gradient directions of one DWI acquisition.
struct GradientScheme {
    std::vector<double> bvals;                   // s/mm^2
    std::vector<std::array<double, 3>> bvecs;    // unit norm where b > 0

    size_t size() const { return bvals.size(); }
};

// Parses FSL-style .bval (one row) and .bvec (three rows x/y/z) text.
// Vectors with b > 0 and norm in [0.5, 2] are renormalized to unit length.
GradientScheme read_bval_bvec(const std::string& bval_text, const std::string& bvec_text);

struct Shell {
    double b = 0.0;            // mean b-value of members
    std::vector<int> volumes;  // indices into the scheme
};

// Greedy clustering in ascending b order: a volume joins the current shell
// when it stays within tol of the shell's running mean after inclusion.
std::vector<Shell> group_shells(const std::vector<double>& bvals, double tol = 50.0);

// Nonzero shell nearest to the target; ties break toward the lower b-value.
const Shell& select_shell(const std::vector<Shell>& shells, double target = 1000.0);

struct ShellSufficiency {
    bool sufficient = false;
    int count = 0;  // volumes with b in [lo, hi], inclusive
};

ShellSufficiency shell_sufficiency(const GradientScheme& scheme, double lo = 500.0,
                                   double hi = 1500.0, int min_count = 12);

struct VoxelTensor {
    std::array<double, 6> D{};  // Dxx, Dyy, Dzz, Dxy, Dxz, Dyz, mm^2/s
    double s0 = 0.0;
    std::array<double, 3> eigenvalues{};  // descending, as fitted (may be negative)
    bool any_clamped = false;             // some eigenvalue was negative
    bool lambda1_clamped = false;         // even the largest eigenvalue was negative
};

// Log-linear least squares tensor fit with one weighted refinement pass
// (weights = predicted signal squared). When b0_mean > 0 the log reference
// is fixed to it; otherwise ln(S0) is estimated as a seventh unknown.
// Rows with nonpositive signal are dropped; more than 50% dropped is an error.
VoxelTensor fit_tensor_wls(std::span<const double> signals, const GradientScheme& scheme,
                           double b0_mean);

// FA = sqrt(3/2) * ||lambda - mean|| / ||lambda||; 0 for the all-zero triple.
double fa(double l1, double l2, double l3);
// MD = (l1 + l2 + l3) / 3.
double md(double l1, double l2, double l3);

struct AggregateMetrics {
    double mean_fa = 0.0;
    double mean_md = 0.0;  // mm^2/s
    double ticv = 0.0;     // mm^3
    size_t n_mask_voxels = 0;
    size_t n_valid_voxels = 0;
};

// Means over mask voxels with valid (non-NaN) map values; TICV counts every
// mask voxel times the voxel volume.
AggregateMetrics aggregate_metrics(const std::vector<double>& fa_map,
                                   const std::vector<double>& md_map,
                                   const Volume& tissue_mask,
                                   const std::array<double, 3>& voxel_size);

struct SessionDwiMetrics {
    double mean_fa = 0.0;
    double mean_md = 0.0;
    double ticv = 0.0;
    size_t n_mask_voxels = 0;
    size_t n_clamped_voxels = 0;
    double shell_b = 0.0;
    int n_dirs_used = 0;
    bool shell_sufficient = false;
    int shell_count = 0;
};

struct DwiConfig {
    double shell_tol = 50.0;
    double target_b = 1000.0;
    double shell_lo = 500.0;
    double shell_hi = 1500.0;
    int min_shell_dirs = 12;
    double b0_max = 50.0;  // volumes below this pool into the b0 reference
};

// Full per-session path: shell grouping, nearest-target shell selection,
// voxelwise tensor fits inside the mask, aggregate FA/MD/TICV.
SessionDwiMetrics compute_session_metrics(const Volume& dwi, const GradientScheme& scheme,
                                          const Volume& mask, const DwiConfig& config = {});

}  // namespace cohortforge::dwi
