#include <doctest.h>

#include <cstring>

#include "cohortforge/error.hpp"
#include "cohortforge/nifti.hpp"
#include "cohortforge/rng.hpp"

using namespace cohortforge::dwi;

namespace {

Volume cube(int n, double fill) {
    Volume v;
    v.ndim = 3;
    v.dims = {n, n, n, 1};
    v.voxel_size = {1.0, 1.0, 1.0};
    v.data.assign(static_cast<size_t>(n) * n * n, fill);
    return v;
}

void patch_float(std::string& bytes, size_t offset, float value) {
    std::memcpy(bytes.data() + offset, &value, 4);
}

}  // namespace

TEST_CASE("64^3 float32 header arithmetic") {
    auto bytes = write_nifti(cube(64, 1.5), kFloat32);
    auto vol = read_nifti(bytes);
    CHECK(vol.nvox() == 262144);
    CHECK(vol.dims[0] == 64);
    CHECK(vol.data[100] == doctest::Approx(1.5));
}

TEST_CASE("detached-header magic is rejected") {
    auto bytes = write_nifti(cube(4, 0.0), kFloat32);
    std::memcpy(bytes.data() + 344, "ni1\0", 4);
    CHECK_THROWS_WITH_AS(read_nifti(bytes), doctest::Contains("UNSUPPORTED_LAYOUT"),
                         cohortforge::Error);
}

TEST_CASE("bad magic is rejected") {
    auto bytes = write_nifti(cube(4, 0.0), kFloat32);
    std::memcpy(bytes.data() + 344, "xxx\0", 4);
    CHECK_THROWS_WITH_AS(read_nifti(bytes), doctest::Contains("BAD_MAGIC"),
                         cohortforge::Error);
}

TEST_CASE("scl_slope/scl_inter applied: slope 2, intercept 10, stored 3 -> 16") {
    Volume v = cube(2, 3.0);
    auto bytes = write_nifti(v, kInt16);
    patch_float(bytes, 112, 2.0f);
    patch_float(bytes, 116, 10.0f);
    auto vol = read_nifti(bytes);
    CHECK(vol.data[0] == doctest::Approx(16.0));
}

TEST_CASE("truncated payload") {
    auto bytes = write_nifti(cube(4, 1.0), kFloat64);
    bytes.resize(bytes.size() - 9);
    CHECK_THROWS_WITH_AS(read_nifti(bytes), doctest::Contains("TRUNCATED"),
                         cohortforge::Error);
}

TEST_CASE("unsupported datatype code") {
    auto bytes = write_nifti(cube(2, 1.0), kFloat32);
    std::int16_t dt = 128;  // RGB, unsupported
    std::memcpy(bytes.data() + 70, &dt, 2);
    CHECK_THROWS_WITH_AS(read_nifti(bytes), doctest::Contains("UNSUPPORTED_DATATYPE"),
                         cohortforge::Error);
}

TEST_CASE("dim[0] invalid in both byte orders") {
    auto bytes = write_nifti(cube(2, 1.0), kFloat32);
    std::int16_t nd = 9;
    std::memcpy(bytes.data() + 40, &nd, 2);
    CHECK_THROWS_WITH_AS(read_nifti(bytes), doctest::Contains("BAD_DIM"),
                         cohortforge::Error);
}

TEST_CASE("read/write round-trip is bit-exact for every supported datatype") {
    cohortforge::Rng rng(11);
    for (int dt : {kUint8, kInt16, kInt32, kFloat32, kFloat64}) {
        Volume v;
        v.ndim = 4;
        v.dims = {3, 4, 5, 2};
        v.voxel_size = {1.25, 1.0, 2.0};
        v.data.resize(v.nvox());
        for (auto& x : v.data) {
            double raw = rng.uniform(0.0, 200.0);
            x = (dt == kFloat32 || dt == kFloat64) ? raw : std::floor(raw);
        }
        if (dt == kFloat32)
            for (auto& x : v.data) x = static_cast<float>(x);
        auto bytes = write_nifti(v, dt);
        auto vol = read_nifti(bytes);
        auto bytes2 = write_nifti(vol, dt);
        CHECK(bytes == bytes2);
        REQUIRE(vol.data.size() == v.data.size());
        for (size_t i = 0; i < v.data.size(); ++i) CHECK(vol.data[i] == v.data[i]);
    }
}

TEST_CASE("gzip round-trip via magic prefix detection") {
    Volume v = cube(6, 2.25);
    auto bytes = write_nifti(v, kFloat32);
    auto gz = gzip_compress(bytes);
    CHECK(is_gzip(gz));
    auto vol = read_nifti(gz);
    CHECK(vol.nvox() == v.nvox());
    CHECK(vol.data[17] == doctest::Approx(2.25));
}

TEST_CASE("byte-swapped file is read via the dim[0] heuristic") {
    Volume v = cube(3, 0.0);
    for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(i);
    auto bytes = write_nifti(v, kFloat32);

    auto swap_at = [&](size_t off, size_t width) {
        for (size_t i = 0; i < width / 2; ++i)
            std::swap(bytes[off + i], bytes[off + width - 1 - i]);
    };
    swap_at(0, 4);                                  // sizeof_hdr
    for (int i = 0; i < 8; ++i) swap_at(40 + 2 * i, 2);  // dim[]
    swap_at(70, 2);                                 // datatype
    swap_at(72, 2);                                 // bitpix
    for (int i = 0; i < 8; ++i) swap_at(76 + 4 * i, 4);  // pixdim[]
    swap_at(108, 4);                                // vox_offset
    swap_at(112, 4);
    swap_at(116, 4);
    for (size_t i = 0; i < v.data.size(); ++i) swap_at(352 + 4 * i, 4);

    auto vol = read_nifti(bytes);
    REQUIRE(vol.nvox() == v.nvox());
    for (size_t i = 0; i < v.data.size(); ++i) CHECK(vol.data[i] == v.data[i]);
}
