#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace cohortforge::dwi {

// NIfTI-1 datatype codes supported by the reader/writer.
enum NiftiDatatype : int {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
};

// A decoded single-file NIfTI-1 volume, data in x-fastest order with
// scl_slope/scl_inter already applied.
struct Volume {
    int ndim = 3;
    std::array<int, 4> dims{0, 0, 0, 1};        // nx, ny, nz, nvol
    std::array<double, 3> voxel_size{1, 1, 1};  // mm
    std::vector<double> data;
    double slope = 1.0;  // scaling read from the header
    double inter = 0.0;
    int datatype = kFloat64;

    size_t nvox_per_volume() const {
        return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    }
    size_t nvox() const { return nvox_per_volume() * (ndim == 4 ? dims[3] : 1); }
    double voxel_volume() const { return voxel_size[0] * voxel_size[1] * voxel_size[2]; }
};

// Reads a single-file NIfTI-1 (.nii) image, optionally gzip-compressed.
// Byte order is detected via the dim[0] in [1,7] heuristic.
Volume read_nifti(const std::string& bytes);

// Writes a canonical single-file NIfTI-1 image in native byte order with
// slope 1 / intercept 0. Data values are encoded into `datatype`.
std::string write_nifti(const Volume& vol, int datatype = kFloat64);

bool is_gzip(const std::string& bytes);
std::string gzip_compress(const std::string& bytes);
std::string gzip_decompress(const std::string& bytes);

}  // namespace cohortforge::dwi
