#include "otmatch/feature_set.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace otmatch {

FeatureSet::FeatureSet(int h, int w, int c)
    : height(h), width(w), channels(c), data(Matrix::Zero(h * w, c)) {
    validate();
}

FeatureSet::FeatureSet(int h, int w, int c, Matrix values)
    : height(h), width(w), channels(c), data(std::move(values)) {
    validate();
}

void FeatureSet::validate() const {
    if (height < 1 || width < 1 || channels < 1)
        throw std::invalid_argument("FeatureSet: dimensions must be >= 1");
    if (data.rows() != static_cast<Eigen::Index>(height) * width ||
        data.cols() != channels)
        throw std::invalid_argument("FeatureSet: data shape does not match grid");
    if (!data.allFinite())
        throw std::invalid_argument("FeatureSet: non-finite entries");
}

FeatureSet FeatureSet::normalized() const {
    FeatureSet out = *this;
    for (Eigen::Index i = 0; i < out.data.rows(); ++i) {
        double n = out.data.row(i).norm();
        if (n > 0.0) {
            out.data.row(i) /= n;
        } else {
            out.data.row(i) = canonical_unit_vector(channels).transpose();
        }
    }
    return out;
}

Matrix flatten(const FeatureSet& fs) {
    fs.validate();
    return fs.data;
}

FeatureSet reshape(int h, int w, int c, const Matrix& rows) {
    return FeatureSet(h, w, c, rows);
}

GlobalVector gap(const FeatureSet& fs, bool normalize) {
    fs.validate();
    Vector mean = fs.data.colwise().mean();
    if (!normalize) return mean;
    double n = mean.norm();
    if (n > 0.0) return mean / n;
    return canonical_unit_vector(fs.channels);
}

Matrix pairwise_cost(const FeatureSet& u, const FeatureSet& v) {
    if (u.channels != v.channels)
        throw std::invalid_argument("pairwise_cost: channel mismatch");
    return Matrix::Ones(u.regions(), v.regions()) - u.data * v.data.transpose();
}

Vector canonical_unit_vector(int channels) {
    Vector e = Vector::Zero(channels);
    e(0) = 1.0;
    return e;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char* p) {
    std::uint32_t bits = get_u32(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
}

}  // namespace

void write_pfs1(const std::string& path, const FeatureSet& fs) {
    fs.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pfs1: cannot open " + path);
    os.write("PFS1", 4);
    put_u32(os, static_cast<std::uint32_t>(fs.height));
    put_u32(os, static_cast<std::uint32_t>(fs.width));
    put_u32(os, static_cast<std::uint32_t>(fs.channels));
    for (Eigen::Index i = 0; i < fs.data.rows(); ++i)
        for (Eigen::Index j = 0; j < fs.data.cols(); ++j)
            put_f32(os, static_cast<float>(fs.data(i, j)));
    if (!os) throw std::runtime_error("write_pfs1: write failed for " + path);
}

FeatureSet read_pfs1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pfs1: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "PFS1", 4) != 0)
        throw std::runtime_error("read_pfs1: bad magic in " + path);
    std::uint32_t h = get_u32(bytes.data() + 4);
    std::uint32_t w = get_u32(bytes.data() + 8);
    std::uint32_t c = get_u32(bytes.data() + 12);
    if (h < 1 || w < 1 || c < 1)
        throw std::runtime_error("read_pfs1: invalid dimensions in " + path);
    std::size_t expected = 16 + std::size_t(4) * h * w * c;
    if (bytes.size() < expected)
        throw std::runtime_error("read_pfs1: truncated payload in " + path);
    if (bytes.size() > expected)
        throw std::runtime_error("read_pfs1: trailing bytes in " + path);
    FeatureSet fs(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    const unsigned char* p = bytes.data() + 16;
    for (Eigen::Index i = 0; i < fs.data.rows(); ++i)
        for (Eigen::Index j = 0; j < fs.data.cols(); ++j, p += 4)
            fs.data(i, j) = static_cast<double>(get_f32(p));
    fs.validate();
    return fs;
}

}  // namespace otmatch
