#include "cohortforge/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>

#include "cohortforge/error.hpp"

namespace cohortforge::dwi {

namespace {

constexpr size_t kHeaderSize = 348;
constexpr size_t kVoxOffset = 352;

template <typename T>
T read_le(const unsigned char* p, bool swap) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap) {
        unsigned char* b = reinterpret_cast<unsigned char*>(&v);
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
    return v;
}

size_t datatype_size(int code) {
    switch (code) {
        case kUint8: return 1;
        case kInt16: return 2;
        case kInt32: return 4;
        case kFloat32: return 4;
        case kFloat64: return 8;
        default:
            fail("UNSUPPORTED_DATATYPE", "NIfTI datatype code " + std::to_string(code));
    }
}

template <typename T>
void decode_payload(const unsigned char* p, size_t n, bool swap, double slope, double inter,
                    std::vector<double>& out) {
    out.resize(n);
    for (size_t i = 0; i < n; ++i) {
        T v = read_le<T>(p + i * sizeof(T), swap);
        double d = static_cast<double>(v);
        out[i] = slope != 0.0 ? d * slope + inter : d;
    }
}

}  // namespace

bool is_gzip(const std::string& bytes) {
    return bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1F &&
           static_cast<unsigned char>(bytes[1]) == 0x8B;
}

std::string gzip_decompress(const std::string& bytes) {
    z_stream strm{};
    if (inflateInit2(&strm, 15 + 32) != Z_OK)
        fail("GZIP", "inflateInit failed", ErrorKind::runtime);
    std::string out;
    out.reserve(bytes.size() * 4);
    std::vector<unsigned char> buf(1 << 16);
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
    strm.avail_in = static_cast<uInt>(bytes.size());
    int rc = Z_OK;
    do {
        strm.next_out = buf.data();
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            fail("GZIP", "corrupt gzip stream");
        }
        out.append(reinterpret_cast<char*>(buf.data()), buf.size() - strm.avail_out);
    } while (rc != Z_STREAM_END && (strm.avail_in > 0 || strm.avail_out == 0));
    inflateEnd(&strm);
    if (rc != Z_STREAM_END) fail("GZIP", "truncated gzip stream");
    return out;
}

std::string gzip_compress(const std::string& bytes) {
    z_stream strm{};
    if (deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK)
        fail("GZIP", "deflateInit failed", ErrorKind::runtime);
    std::string out;
    std::vector<unsigned char> buf(1 << 16);
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
    strm.avail_in = static_cast<uInt>(bytes.size());
    int rc = Z_OK;
    do {
        strm.next_out = buf.data();
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = deflate(&strm, Z_FINISH);
        out.append(reinterpret_cast<char*>(buf.data()), buf.size() - strm.avail_out);
    } while (rc != Z_STREAM_END);
    deflateEnd(&strm);
    return out;
}

Volume read_nifti(const std::string& raw_bytes) {
    const std::string bytes = is_gzip(raw_bytes) ? gzip_decompress(raw_bytes) : raw_bytes;
    if (bytes.size() < kHeaderSize)
        fail("TRUNCATED", "NIfTI input shorter than the 348-byte header");
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());

    const char* magic = bytes.data() + 344;
    if (std::memcmp(magic, "ni1\0", 4) == 0)
        fail("UNSUPPORTED_LAYOUT", "detached .hdr/.img NIfTI layout is not supported");
    if (std::memcmp(magic, "n+1\0", 4) != 0)
        fail("BAD_MAGIC", "input is not a single-file NIfTI-1 image");

    // Byte order: dim[0] must land in [1,7] in one of the two orders.
    bool swap = false;
    std::int16_t ndim = read_le<std::int16_t>(p + 40, false);
    if (ndim < 1 || ndim > 7) {
        swap = true;
        ndim = read_le<std::int16_t>(p + 40, true);
        if (ndim < 1 || ndim > 7)
            fail("BAD_DIM", "dim[0] outside [1,7] in both byte orders");
    }
    if (ndim > 4)
        fail("UNSUPPORTED_LAYOUT", "only 3D/4D volumes are supported, got dim[0]=" +
                                       std::to_string(ndim));

    Volume vol;
    vol.ndim = ndim;
    for (int i = 0; i < 4; ++i) {
        std::int16_t d = i < ndim ? read_le<std::int16_t>(p + 42 + 2 * i, swap)
                                  : static_cast<std::int16_t>(1);
        if (d <= 0) fail("BAD_DIM", "nonpositive dimension " + std::to_string(d));
        vol.dims[i] = d;
    }
    for (int i = 0; i < 3; ++i) {
        float px = read_le<float>(p + 76 + 4 * (i + 1), swap);
        if (!(px > 0.0f)) fail("BAD_DIM", "nonpositive pixdim");
        vol.voxel_size[i] = px;
    }
    vol.datatype = read_le<std::int16_t>(p + 70, swap);
    size_t elem = datatype_size(vol.datatype);
    vol.slope = read_le<float>(p + 112, swap);
    vol.inter = read_le<float>(p + 116, swap);
    float vox_offset = read_le<float>(p + 108, swap);
    size_t offset = static_cast<size_t>(vox_offset);
    if (offset < kHeaderSize) offset = kVoxOffset;

    size_t n = vol.nvox();
    if (bytes.size() < offset + n * elem)
        fail("TRUNCATED", "NIfTI payload shorter than dim[] implies");

    const unsigned char* payload = p + offset;
    switch (vol.datatype) {
        case kUint8: decode_payload<std::uint8_t>(payload, n, swap, vol.slope, vol.inter, vol.data); break;
        case kInt16: decode_payload<std::int16_t>(payload, n, swap, vol.slope, vol.inter, vol.data); break;
        case kInt32: decode_payload<std::int32_t>(payload, n, swap, vol.slope, vol.inter, vol.data); break;
        case kFloat32: decode_payload<float>(payload, n, swap, vol.slope, vol.inter, vol.data); break;
        case kFloat64: decode_payload<double>(payload, n, swap, vol.slope, vol.inter, vol.data); break;
        default: break;  // unreachable, datatype_size already failed
    }
    return vol;
}

std::string write_nifti(const Volume& vol, int datatype) {
    size_t n = vol.nvox();
    if (vol.data.size() != n)
        fail("BAD_DIM", "data length does not match dims");
    size_t elem = datatype_size(datatype);

    std::string out(kVoxOffset + n * elem, '\0');
    unsigned char* p = reinterpret_cast<unsigned char*>(out.data());

    auto put_i32 = [&](size_t off, std::int32_t v) { std::memcpy(p + off, &v, 4); };
    auto put_i16 = [&](size_t off, std::int16_t v) { std::memcpy(p + off, &v, 2); };
    auto put_f32 = [&](size_t off, float v) { std::memcpy(p + off, &v, 4); };

    put_i32(0, 348);
    p[38] = 'r';  // analyze-compat "regular" flag
    put_i16(40, static_cast<std::int16_t>(vol.ndim));
    for (int i = 0; i < 7; ++i) {
        int d = i < vol.ndim ? vol.dims[i] : 1;
        put_i16(42 + 2 * i, static_cast<std::int16_t>(d));
    }
    put_i16(70, static_cast<std::int16_t>(datatype));
    put_i16(72, static_cast<std::int16_t>(elem * 8));  // bitpix
    put_f32(76, 1.0f);
    for (int i = 0; i < 3; ++i) put_f32(76 + 4 * (i + 1), static_cast<float>(vol.voxel_size[i]));
    for (int i = 4; i < 8; ++i) put_f32(76 + 4 * i, 1.0f);
    put_f32(108, static_cast<float>(kVoxOffset));
    put_f32(112, 1.0f);  // scl_slope
    put_f32(116, 0.0f);  // scl_inter
    p[123] = 10;         // xyzt_units: NIFTI_UNITS_MM | NIFTI_UNITS_SEC
    std::memcpy(p + 344, "n+1\0", 4);

    unsigned char* payload = p + kVoxOffset;
    for (size_t i = 0; i < n; ++i) {
        double v = vol.data[i];
        switch (datatype) {
            case kUint8: {
                auto b = static_cast<std::uint8_t>(std::llround(v));
                std::memcpy(payload + i, &b, 1);
                break;
            }
            case kInt16: {
                auto s = static_cast<std::int16_t>(std::llround(v));
                std::memcpy(payload + i * 2, &s, 2);
                break;
            }
            case kInt32: {
                auto w = static_cast<std::int32_t>(std::llround(v));
                std::memcpy(payload + i * 4, &w, 4);
                break;
            }
            case kFloat32: {
                auto f = static_cast<float>(v);
                std::memcpy(payload + i * 4, &f, 4);
                break;
            }
            case kFloat64:
                std::memcpy(payload + i * 8, &v, 8);
                break;
            default: break;
        }
    }
    return out;
}

}  // namespace cohortforge::dwi
