#include "ssankit/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "ssankit/config.hpp"

namespace ssankit {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'S', 'A', 'N', 'K', 'I', 'T', '\0'};

template <class T>
void put(std::vector<char>& out, T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        T value;
        read(&value, sizeof(T));
        return value;
    }

    void read(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw DataError("truncated tensor archive");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<char>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<char> serialize_archive(const TensorArchive& archive) {
    std::vector<char> out(kMagic, kMagic + sizeof(kMagic));
    put<std::uint32_t>(out, kArchiveVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.size()));
    for (const auto& [key, tensor] : archive) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
        out.insert(out.end(), key.begin(), key.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) put<std::uint64_t>(out, d);
        const auto* p = reinterpret_cast<const char*>(tensor.data());
        out.insert(out.end(), p, p + tensor.size() * sizeof(double));
    }
    return out;
}

TensorArchive deserialize_archive(const std::vector<char>& bytes) {
    Reader in(bytes);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("not a tensor archive (bad magic)");
    const auto version = in.get<std::uint32_t>();
    if (version != kArchiveVersion) {
        throw DataError("unsupported tensor archive version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    TensorArchive archive;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string key(in.get<std::uint32_t>(), '\0');
        in.read(key.data(), key.size());
        Shape shape(in.get<std::uint32_t>());
        for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
        std::vector<double> values(shape_size(shape));
        in.read(values.data(), values.size() * sizeof(double));
        archive.emplace(std::move(key), Tensor(std::move(shape), std::move(values)));
    }
    if (!in.done()) throw DataError("trailing bytes after tensor archive");
    return archive;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
    const auto bytes = serialize_archive(archive);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write archive " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TensorArchive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open archive " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_archive(bytes);
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << value;
    return os.str();
}

} // namespace ssankit
