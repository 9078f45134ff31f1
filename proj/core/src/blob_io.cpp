#include "geolab/blob_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace geolab {
namespace {

constexpr char kMagic[8] = {'G', 'L', 'T', 'E', 'N', 'S', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "blob I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("tensor blob: truncated stream");
    return v;
}

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!os) throw Error("tensor blob: write failed");
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("tensor blob: cannot open " + path + " for writing");
    save_tensor(os, t);
}

TensorPtr load_tensor(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error("tensor blob: bad magic");
    }
    auto rank = read_pod<std::uint32_t>(is);
    if (rank > 16) throw Error("tensor blob: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
    std::int64_t n = numel(shape);
    if (n < 0 || n > (std::int64_t(1) << 34)) {
        throw Error("tensor blob: implausible element count");
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 8));
    if (!is) throw Error("tensor blob: truncated payload");
    return make_leaf(std::move(data), std::move(shape), false);
}

TensorPtr load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("tensor blob: cannot open " + path);
    return load_tensor(is);
}

}  // namespace geolab
