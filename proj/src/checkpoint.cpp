#include "rehar/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "rehar/error.hpp"

namespace rehar {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError(std::string("checkpoint truncated reading ") + what);
  return v;
}

std::string get_bytes(std::istream& in, std::uint32_t n, const char* what) {
  if (n > (1u << 28)) throw DataError(std::string("checkpoint: implausible length for ") + what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw DataError(std::string("checkpoint truncated reading ") + what);
  return s;
}

std::uint32_t narrow(std::size_t v) {
  if (v > 0xffffffffu) throw DataError("checkpoint: value does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void save_checkpoint(std::ostream& out, const ReHARModel& model, const RunConfig& config) {
  RunConfig embedded = config;
  embedded.model = model.config;
  const std::string text = serialize_run_config(embedded);
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, narrow(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = model.parameters();
  put_u32(out, narrow(params.size()));
  for (const auto& p : params) {
    put_u32(out, narrow(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(out, narrow(p.tensor->rank()));
    for (auto d : p.tensor->shape()) put_u32(out, narrow(d));
    for (double v : p.tensor->values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      put_u32(out, bits);
    }
  }
  if (!out) throw DataError("checkpoint: write failed");
}

void save_checkpoint(const std::filesystem::path& path, const ReHARModel& model, const RunConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  save_checkpoint(out, model, config);
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw DataError("checkpoint: bad magic (expected RHAR)");
  const auto version = get_u32(in, "version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::string text = get_bytes(in, get_u32(in, "config length"), "config");
  std::istringstream cfg(text);
  Checkpoint ck{parse_run_config(cfg, "checkpoint config"), {}};
  ck.model = ReHARModel::zeros(ck.config.model);
  auto params = ck.model.parameters();
  const auto count = get_u32(in, "parameter count");
  if (count != params.size())
    throw DataError("checkpoint: " + std::to_string(count) + " parameters stored, architecture has " +
                    std::to_string(params.size()));
  for (auto& p : params) {
    const std::string name = get_bytes(in, get_u32(in, "name length"), "name");
    if (name != p.name) throw DataError("checkpoint: expected parameter '" + p.name + "', found '" + name + "'");
    const auto rank = get_u32(in, "rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get_u32(in, "dims"));
    if (shape != p.tensor->shape())
      throw DataError("checkpoint: parameter '" + name + "' has shape " + shape_to_string(shape) + ", expected " +
                      shape_to_string(p.tensor->shape()));
    for (double& v : p.tensor->data()) v = static_cast<double>(std::bit_cast<float>(get_u32(in, "payload")));
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace rehar
