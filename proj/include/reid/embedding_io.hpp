#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace reid {

/// Raw (unnormalized) embedding rows as exchanged on disk.
struct EmbeddingFile {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> values;  // ids.size() x dim, row-major

  std::span<const float> row(std::size_t r) const { return {values.data() + r * dim, dim}; }
  bool operator==(const EmbeddingFile&) const = default;
};

/// 8-byte magic "MREID1\0\0" of the binary format.
inline constexpr std::string_view kMreidMagic{"MREID1\0\0", 8};

/// Binary layout, little-endian: magic, u32 rows, u32 dim, rows x dim float32,
/// then per row a u16 byte length and that many UTF-8 bytes of id.
std::string encode_mreid(const EmbeddingFile& file);

/// Throws FormatError on any structural problem (magic, truncation, trailing
/// bytes, invalid UTF-8 ids).
EmbeddingFile decode_mreid(std::string_view bytes);

/// One {"id": "...", "vector": [...]} object per line.
EmbeddingFile parse_embedding_jsonl(std::string_view text);
std::string encode_embedding_jsonl(const EmbeddingFile& file);

/// Sniffs the magic and dispatches to the binary or JSONL reader. Throws IoError.
EmbeddingFile load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace reid
