#include "cocola/container.hpp"

#include "cocola/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "container format assumes a little-endian host");

namespace container {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'C', 'O', 'C', 'T', 'R', '1'};

void put_bytes(std::string& buf, const void* data, size_t n) {
    buf.append(static_cast<const char*>(data), n);
}

void put_u32(std::string& buf, uint32_t v) { put_bytes(buf, &v, sizeof v); }
void put_u64(std::string& buf, uint64_t v) { put_bytes(buf, &v, sizeof v); }

void put_string(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<uint32_t>(s.size()));
    put_bytes(buf, s.data(), s.size());
}

class Reader {
public:
    Reader(const std::string& data, const std::string& what) : data_(data), what_(what) {}

    void take(void* out, size_t n) {
        if (pos_ + n > data_.size()) throw DataError(what_ + ": truncated container");
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    uint32_t u32() {
        uint32_t v;
        take(&v, sizeof v);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        take(&v, sizeof v);
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        if (pos_ + n > data_.size()) throw DataError(what_ + ": truncated container");
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    size_t pos() const { return pos_; }

private:
    const std::string& data_;
    std::string what_;
    size_t pos_ = 0;
};

}  // namespace

const std::string* Container::find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return &v;
    return nullptr;
}

const numkit::Matrix* Container::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e.value;
    return nullptr;
}

void Container::set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta) {
        if (k == key) {
            v = value;
            return;
        }
    }
    meta.emplace_back(key, value);
}

void Container::add(const std::string& name, numkit::Matrix m) {
    entries.push_back({name, std::move(m)});
}

void save(const Container& c, const std::filesystem::path& path) {
    std::string buf;
    put_bytes(buf, kMagic, sizeof kMagic);
    put_u32(buf, static_cast<uint32_t>(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
        put_string(buf, k);
        put_string(buf, v);
    }
    put_u32(buf, static_cast<uint32_t>(c.entries.size()));
    for (const auto& e : c.entries) {
        put_string(buf, e.name);
        put_u64(buf, static_cast<uint64_t>(e.value.rows()));
        put_u64(buf, static_cast<uint64_t>(e.value.cols()));
        put_bytes(buf, e.value.data(), sizeof(double) * static_cast<size_t>(e.value.size()));
    }
    put_u64(buf, numkit::fnv1a64(buf.data(), buf.size()));

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open for writing: " + tmp);
        os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!os) throw DataError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Container load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open container: " + path.string());
    std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    const std::string what = path.string();
    if (data.size() < sizeof kMagic + sizeof(uint64_t)) throw DataError(what + ": truncated container");
    if (std::memcmp(data.data(), kMagic, sizeof kMagic) != 0)
        throw DataError(what + ": bad container magic");

    uint64_t stored;
    std::memcpy(&stored, data.data() + data.size() - sizeof stored, sizeof stored);
    const uint64_t actual = numkit::fnv1a64(data.data(), data.size() - sizeof stored);
    if (stored != actual)
        throw DataError(what + ": checksum mismatch, container is corrupt");

    Reader r(data, what);
    char magic[8];
    r.take(magic, sizeof magic);

    Container c;
    const uint32_t n_meta = r.u32();
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        c.meta.emplace_back(std::move(k), std::move(v));
    }
    const uint32_t n_entries = r.u32();
    for (uint32_t i = 0; i < n_entries; ++i) {
        Entry e;
        e.name = r.str();
        const uint64_t rows = r.u64();
        const uint64_t cols = r.u64();
        if (rows > (1u << 24) || cols > (1u << 24))
            throw DataError(what + ": implausible matrix shape in container");
        e.value.resize(static_cast<numkit::Index>(rows), static_cast<numkit::Index>(cols));
        r.take(e.value.data(), sizeof(double) * static_cast<size_t>(rows * cols));
        c.entries.push_back(std::move(e));
    }
    if (r.pos() != data.size() - sizeof stored)
        throw DataError(what + ": trailing bytes in container");
    return c;
}

uint64_t file_digest(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open for digest: " + path.string());
    std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return numkit::fnv1a64(data.data(), data.size());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open for writing: " + tmp);
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!os) throw DataError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string hex64(uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return s;
}

}  // namespace container
