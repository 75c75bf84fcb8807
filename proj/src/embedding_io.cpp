#include "gaitasms/evaluate.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace gaitasms {

namespace {

constexpr std::uint32_t kEmbeddingVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (in.size() - pos < 4) throw IoError("embedding file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
  return v;
}

}  // namespace

void write_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingMatrix>& embeddings) {
  const Index strips = embeddings.empty() ? 0 : embeddings.front().values.rows();
  const Index dim = embeddings.empty() ? 0 : embeddings.front().values.cols();
  std::string out = "GASM";
  put_u32(out, kEmbeddingVersion);
  put_u32(out, static_cast<std::uint32_t>(strips));
  put_u32(out, static_cast<std::uint32_t>(dim));
  put_u32(out, static_cast<std::uint32_t>(embeddings.size()));
  for (const auto& e : embeddings) {
    if (e.values.rows() != strips || e.values.cols() != dim)
      throw ShapeError("write_embeddings: all embeddings must share strips x embed_dim");
    if (!e.values.allFinite()) throw ShapeError("write_embeddings: non-finite embedding values");
    put_u32(out, e.label);
    put_u32(out, e.view);
    put_u32(out, e.condition);
    for (Index r = 0; r < strips; ++r)
      for (Index c = 0; c < dim; ++c) put_u32(out, std::bit_cast<std::uint32_t>(e.values(r, c)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write embeddings " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing embeddings " + path.string());
}

std::vector<EmbeddingMatrix> read_embeddings(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read embeddings " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 4 || in.compare(0, 4, "GASM") != 0) throw IoError(path.string() + " is not an embedding file");
  std::size_t pos = 4;
  const std::uint32_t version = get_u32(in, pos);
  if (version != kEmbeddingVersion) throw IoError("unsupported embedding file version " + std::to_string(version));
  const Index strips = get_u32(in, pos), dim = get_u32(in, pos);
  const std::uint32_t count = get_u32(in, pos);
  std::vector<EmbeddingMatrix> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    EmbeddingMatrix e;
    e.label = get_u32(in, pos);
    e.view = get_u32(in, pos);
    e.condition = get_u32(in, pos);
    e.values.resize(strips, dim);
    for (Index r = 0; r < strips; ++r)
      for (Index c = 0; c < dim; ++c) e.values(r, c) = std::bit_cast<float>(get_u32(in, pos));
    out.push_back(std::move(e));
  }
  if (pos != in.size()) throw IoError("embedding file has trailing bytes");
  return out;
}

}  // namespace gaitasms
