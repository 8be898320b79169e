#include "maskedit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "maskedit/errors.hpp"

namespace maskedit {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'S', 'K', 'E', 'D', 'C', 'K', 'P'};
constexpr std::size_t kPrelude = 8 + 4 + 8;

struct Entry {
  std::string segment;
  std::string name;
  Shape shape;
  const double* data;
};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t at) {
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state) {
  std::vector<Entry> entries;
  for (const char* seg : kSegments)
    for (const auto& [name, t] : state.pipeline.segment(seg))
      entries.push_back({seg, name, t.shape(), t.values().data()});
  json slot_steps = json::object();
  for (const auto& [name, slot] : state.optimizer.slots) {
    const Shape shape{static_cast<int>(slot.m.size())};
    entries.push_back({"optimizer", "m/" + name, shape, slot.m.data()});
    entries.push_back({"optimizer", "v/" + name, shape, slot.v.data()});
    slot_steps[name] = slot.t;
  }

  json table = json::array();
  for (const auto& e : entries) table.push_back({{"segment", e.segment}, {"name", e.name}, {"shape", e.shape}});
  std::ostringstream rng;
  rng << state.rng;
  const json header{{"format", "maskedit-checkpoint"},
                    {"step", state.step},
                    {"rng", rng.str()},
                    {"config", to_json(state.config)},
                    {"optimizer", {{"step", state.optimizer.step}, {"slot_steps", slot_steps}}},
                    {"tensors", table}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& e : entries) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(e.data);
    out.insert(out.end(), p, p + numel(e.shape) * sizeof(double));
  }
  return out;
}

TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPrelude || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError("not a maskedit checkpoint (bad magic or truncated prelude)");
  const auto version = get<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const auto header_len = get<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kPrelude) throw FormatError("checkpoint truncated inside its header");

  json header;
  try {
    header = json::parse(bytes.begin() + kPrelude, bytes.begin() + static_cast<std::ptrdiff_t>(kPrelude + header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  TrainState state;
  try {
    state = TrainState::create(train_config_from_json(header.at("config")));
    state.step = header.at("step").get<std::int64_t>();
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> state.rng;
    if (!rng) throw FormatError("checkpoint RNG state is malformed");
    state.optimizer.step = header.at("optimizer").at("step").get<std::int64_t>();

    // Index the stored table.
    struct Stored {
      Shape shape;
      std::size_t offset;
    };
    std::map<std::pair<std::string, std::string>, Stored> stored;
    std::size_t offset = kPrelude + header_len;
    for (const auto& t : header.at("tensors")) {
      Stored s{t.at("shape").get<Shape>(), offset};
      offset += numel(s.shape) * sizeof(double);
      stored.emplace(std::make_pair(t.at("segment").get<std::string>(), t.at("name").get<std::string>()), s);
    }
    if (offset != bytes.size())
      throw FormatError("checkpoint payload is " + std::to_string(bytes.size() - kPrelude - header_len) +
                        " bytes, table expects " + std::to_string(offset - kPrelude - header_len) + " (truncated?)");

    auto copy_into = [&](const Stored& s, double* dst) {
      std::memcpy(dst, bytes.data() + s.offset, numel(s.shape) * sizeof(double));
    };

    std::set<std::pair<std::string, std::string>> used;
    for (const char* seg : kSegments)
      for (auto& [name, t] : state.pipeline.segment(seg)) {
        const auto key = std::make_pair(std::string(seg), name);
        const auto it = stored.find(key);
        if (it == stored.end()) throw ConsistencyError("checkpoint segment " + std::string(seg) + " lacks " + name);
        if (it->second.shape != t.shape())
          throw ConsistencyError("checkpoint tensor " + name + " has shape " + to_string(it->second.shape) +
                                 ", configuration expects " + to_string(t.shape()) +
                                 " (segments disagree on the model configuration)");
        Tensor handle = t;
        copy_into(it->second, handle.mutable_values().data());
        used.insert(key);
      }

    for (const auto& [name, t] : header.at("optimizer").at("slot_steps").items()) {
      AdamSlot slot;
      slot.t = t.get<std::int64_t>();
      for (auto [prefix, dst] : {std::pair{"m/", &slot.m}, std::pair{"v/", &slot.v}}) {
        const auto key = std::make_pair(std::string("optimizer"), prefix + name);
        const auto it = stored.find(key);
        if (it == stored.end()) throw ConsistencyError("optimizer state for " + name + " is missing");
        dst->resize(numel(it->second.shape));
        copy_into(it->second, dst->data());
        used.insert(key);
      }
      state.optimizer.slots.emplace(name, std::move(slot));
    }
    if (used.size() != stored.size()) throw ConsistencyError("checkpoint holds tensors the configuration does not use");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  return state;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize_checkpoint(state);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint " + path.string() + " not found");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace maskedit
