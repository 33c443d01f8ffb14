#pragma once

#include "cocola/numkit.hpp"

#include <filesystem>
#include <string>
#include <vector>

// Binary named-matrix container used by model and adapter checkpoints.
// Layout (all integers little-endian):
//
//   8 bytes   magic "COCOCTR1"
//   u32       meta count, then per entry: u32 key len, key bytes,
//             u32 value len, value bytes
//   u32       matrix count, then per entry: u32 name len, name bytes,
//             u64 rows, u64 cols, rows*cols raw IEEE-754 doubles
//             in row-major order
//   u64       FNV-1a 64 checksum of every preceding byte
//
// Raw doubles round-trip bit-exactly; the trailing checksum is verified on
// load and any mismatch is reported as corruption.

namespace container {

struct Entry {
    std::string name;
    numkit::Matrix value;
};

struct Container {
    // Ordered key/value metadata (written and compared in insertion order).
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<Entry> entries;

    const std::string* find_meta(const std::string& key) const;
    const numkit::Matrix* find(const std::string& name) const;
    void set_meta(const std::string& key, const std::string& value);
    void add(const std::string& name, numkit::Matrix m);
};

/// Serialize to path atomically (temp file + rename).
void save(const Container& c, const std::filesystem::path& path);

/// Parse and checksum-verify; throws DataError on corruption or truncation.
Container load(const std::filesystem::path& path);

/// Checksum of a whole file, for input digests in run manifests.
uint64_t file_digest(const std::filesystem::path& path);

/// Temp-file + rename write used by every text output (streams, reports,
/// manifests).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

std::string hex64(uint64_t value);

}  // namespace container
