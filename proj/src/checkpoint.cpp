#include "seqrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "seqrec/corpus.hpp"

namespace seqrec {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

std::uint64_t fnv1a64(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["blocks"] = c.blocks;
  j["max_len"] = c.max_len;
  j["item_vocab"] = c.item_vocab;
  j["attr_vocab"] = c.attr_vocab;
  j["dropout"] = c.dropout;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.item_vocab = j.at("item_vocab").get<int>();
  c.attr_vocab = j.at("attr_vocab").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["stage"] =
      ckpt.stage == Stage::pretrained ? "pretrained" : "finetuned";
  manifest["epoch"] = ckpt.epoch;
  manifest["rng_state"] = ckpt.rng_state;
  manifest["config"] = config_to_json(ckpt.config);

  std::vector<char> payload;
  json tensors = json::array();
  for_each_tensor(ckpt.params, [&](const std::string& name, const MatF& t) {
    json entry;
    entry["name"] = name;
    entry["rows"] = t.rows();
    entry["cols"] = t.cols();
    entry["dtype"] = "f32";
    entry["offset"] = payload.size();
    const std::size_t bytes =
        static_cast<std::size_t>(t.size()) * sizeof(float);
    entry["bytes"] = bytes;
    entry["fnv1a64"] = hex64(fnv1a64(t.data(), bytes));
    tensors.push_back(std::move(entry));
    const std::size_t at = payload.size();
    payload.resize(at + bytes);
    std::memcpy(payload.data() + at, t.data(), bytes);
  });
  manifest["tensors"] = std::move(tensors);
  manifest["payload_fnv1a64"] =
      hex64(fnv1a64(payload.data(), payload.size()));

  {
    std::ofstream out(dir / "tensors.bin", std::ios::binary);
    if (!out) throw IoError("cannot write tensors.bin");
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest.json");
    out << manifest.dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "history.jsonl");
    if (!out) throw IoError("cannot write history.jsonl");
    for (const auto& line : ckpt.history) out << line << "\n";
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw CorruptCheckpoint("missing manifest.json in " + dir.string());
  json manifest = json::parse(mf, nullptr, false);
  if (manifest.is_discarded()) throw CorruptCheckpoint("unparseable manifest");

  Checkpoint ckpt;
  ckpt.config = config_from_json(manifest.at("config"));
  ckpt.stage = manifest.at("stage").get<std::string>() == "finetuned"
                   ? Stage::finetuned
                   : Stage::pretrained;
  ckpt.epoch = manifest.at("epoch").get<int>();
  ckpt.rng_state = manifest.at("rng_state").get<std::string>();
  ckpt.params = make_zero_params<float>(ckpt.config);

  std::ifstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw CorruptCheckpoint("missing tensors.bin");
  std::vector<char> payload((std::istreambuf_iterator<char>(bin)),
                            std::istreambuf_iterator<char>());
  const std::string payload_hash =
      manifest.at("payload_fnv1a64").get<std::string>();
  if (hex64(fnv1a64(payload.data(), payload.size())) != payload_hash)
    throw CorruptCheckpoint("payload hash mismatch");

  std::size_t entry_idx = 0;
  const json& tensors = manifest.at("tensors");
  for_each_tensor(ckpt.params, [&](const std::string& name, MatF& t) {
    if (entry_idx >= tensors.size())
      throw CorruptCheckpoint("manifest missing tensor " + name);
    const json& e = tensors.at(entry_idx++);
    if (e.at("name").get<std::string>() != name)
      throw CorruptCheckpoint("manifest order mismatch at " + name);
    if (e.at("rows").get<Eigen::Index>() != t.rows() ||
        e.at("cols").get<Eigen::Index>() != t.cols())
      throw CorruptCheckpoint("shape mismatch for " + name);
    if (e.at("dtype").get<std::string>() != "f32")
      throw CorruptCheckpoint("unsupported dtype for " + name);
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t bytes = e.at("bytes").get<std::size_t>();
    if (offset + bytes > payload.size())
      throw CorruptCheckpoint("payload truncated at " + name);
    std::memcpy(t.data(), payload.data() + offset, bytes);
    if (hex64(fnv1a64(t.data(), bytes)) != e.at("fnv1a64").get<std::string>())
      throw CorruptCheckpoint("tensor hash mismatch for " + name);
  });
  if (entry_idx != tensors.size())
    throw CorruptCheckpoint("manifest lists unexpected extra tensors");

  std::ifstream hist(dir / "history.jsonl");
  if (hist) {
    std::string line;
    while (std::getline(hist, line))
      if (!line.empty()) ckpt.history.push_back(line);
  }
  return ckpt;
}

}  // namespace seqrec
