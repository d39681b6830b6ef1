#include "flowdehaze/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>

#include <nlohmann/json.hpp>

#include "flowdehaze/dataset.hpp"
#include "flowdehaze/error.hpp"

namespace flowdehaze {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'F', 'D', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_floats(std::ostream& os, std::span<const float> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

std::string describe(const ArchSpec& a) {
  return "base_channels=" + std::to_string(a.base_channels) + " depth=" + std::to_string(a.depth) +
         " time_embed_dim=" + std::to_string(a.time_embed_dim) + " conditioning=" + to_string(a.conditioning);
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  const auto params = c.field.parameters();
  const std::size_t n = params.size();
  const bool has_moments = c.optimizer.m.size() == n && c.optimizer.v.size() == n;
  const ArchSpec& a = c.field.arch();

  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["arch"] = {{"base_channels", a.base_channels},
                    {"depth", a.depth},
                    {"time_embed_dim", a.time_embed_dim},
                    {"in_channels", a.in_channels()}};
  header["conditioning"] = to_string(a.conditioning);
  header["iteration"] = c.iteration;
  header["norm_stats"] = c.norm_stats ? to_json(*c.norm_stats) : json(nullptr);
  header["best_val_loss"] = c.best_val_loss ? json(*c.best_val_loss) : json(nullptr);
  header["optimizer"] = {{"type", "adam"}, {"step", c.optimizer.step}};
  json tensors = json::array();
  for (const auto& e : c.field.network().layout()) tensors.push_back({{"name", e.name}, {"offset", e.offset}, {"count", e.count}});
  header["tensors"] = std::move(tensors);
  header["blocks"] = {{"params", {0, n}}};
  if (has_moments) {
    header["blocks"]["adam_m"] = {n, n};
    header["blocks"]["adam_v"] = {2 * n, n};
  }
  const std::string text = header.dump();

  // Write to a sibling temp file and rename so a crash never leaves a torn checkpoint.
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    os.write(kMagic.data(), kMagic.size());
    const std::uint64_t len = text.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_floats(os, params);
    if (has_moments) {
      write_floats(os, c.optimizer.m);
      write_floats(os, c.optimizer.v);
    }
    if (!os) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw DataError("not a checkpoint file: " + path.string());
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || len > (1ull << 30)) throw DataError("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw DataError("truncated checkpoint header: " + path.string());

  try {
    const json h = json::parse(text);
    if (h.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw IncompatibilityError("unsupported checkpoint format version in " + path.string());
    }
    ArchSpec arch;
    arch.base_channels = h.at("arch").at("base_channels").get<int>();
    arch.depth = h.at("arch").at("depth").get<int>();
    arch.time_embed_dim = h.at("arch").at("time_embed_dim").get<int>();
    arch.conditioning = conditioning_from_string(h.at("conditioning").get<std::string>());

    const auto read_block = [&](const char* name) -> std::vector<float> {
      if (!h.at("blocks").contains(name)) return {};
      const auto off = h["blocks"][name][0].get<std::size_t>();
      const auto count = h["blocks"][name][1].get<std::size_t>();
      std::vector<float> v(count);
      is.seekg(static_cast<std::streamoff>(8 + sizeof len + len + off * sizeof(float)));
      is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)));
      if (!is) throw DataError(std::string("truncated checkpoint block '") + name + "' in " + path.string());
      return v;
    };

    Checkpoint c{VelocityField(arch, read_block("params")), {}, h.at("iteration").get<long>(), std::nullopt, std::nullopt};
    c.optimizer.step = h.at("optimizer").at("step").get<std::uint64_t>();
    c.optimizer.m = read_block("adam_m");
    c.optimizer.v = read_block("adam_v");
    if (!h.at("norm_stats").is_null()) c.norm_stats = norm_stats_from_json(h.at("norm_stats"));
    if (!h.at("best_val_loss").is_null()) c.best_val_loss = h.at("best_val_loss").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw IncompatibilityError("checkpoint " + path.string() + ": " + e.what());
  }
}

Checkpoint load_checkpoint(const fs::path& path, const ArchSpec& expected) {
  Checkpoint c = load_checkpoint(path);
  if (!(c.field.arch() == expected)) {
    throw IncompatibilityError("checkpoint " + path.string() + " has arch {" + describe(c.field.arch()) +
                               "} but the config expects {" + describe(expected) + "}");
  }
  return c;
}

}  // namespace flowdehaze
