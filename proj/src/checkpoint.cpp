#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "powerlink/error.hpp"
#include "powerlink/model.hpp"

namespace powerlink {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'L', 'N', 'K'};

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

struct Loaded {
  nlohmann::json meta;
  KgcModel model;
};

Loaded read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw DataError("not a checkpoint file");
  pos = 4;
  const auto version = take<std::uint16_t>(bytes, pos);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = take<std::uint32_t>(bytes, pos);
  if (pos + meta_len > bytes.size()) throw DataError("checkpoint is truncated");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  pos += meta_len;

  ModelShape shape;
  std::size_t ne = 0, nr = 0;
  ad::ParamStore params;
  try {
    shape.dim = meta.at("dim").get<std::size_t>();
    shape.layers = meta.at("layers").get<std::size_t>();
    shape.basis = meta.at("basis").get<std::size_t>();
    shape.decoder = decoder_from_string(meta.at("decoder").get<std::string>());
    ne = meta.at("num_entities").get<std::size_t>();
    nr = meta.at("num_relations").get<std::size_t>();
    for (const auto& t : meta.at("tensors")) {
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      ad::Tensor value(rows, cols);
      for (double& v : value.values()) v = static_cast<double>(take<float>(bytes, pos));
      params.add(t.at("name").get<std::string>(), std::move(value));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata is incomplete: ") + e.what());
  } catch (const ContractError& e) {
    throw DataError(e.what());
  }
  if (pos != bytes.size()) throw DataError("checkpoint has trailing bytes");
  return {std::move(meta), KgcModel(ne, nr, shape, std::move(params))};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const KgcModel& model, const KnowledgeGraph& g) {
  const auto& p = model.params();
  nlohmann::json meta;
  meta["dim"] = model.shape().dim;
  meta["layers"] = model.shape().layers;
  meta["basis"] = model.shape().basis;
  meta["decoder"] = to_string(model.decoder());
  meta["num_entities"] = model.num_entities();
  meta["num_relations"] = model.num_relations();
  meta["entity_vocab_hash"] = hex64(g.entities().fingerprint());
  meta["relation_vocab_hash"] = hex64(g.relations().fingerprint());
  auto tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < p.size(); ++i)
    tensors.push_back({{"name", p.name(i)}, {"rows", p.value(i).rows()}, {"cols", p.value(i).cols()}});
  meta["tensors"] = std::move(tensors);
  const std::string text = meta.dump();

  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (double v : p.value(i).values()) put<float>(out, static_cast<float>(v));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

KgcModel load_checkpoint(const std::filesystem::path& path, const KnowledgeGraph& g) {
  Loaded l = read_checkpoint(path);
  const auto ent = l.meta.value("entity_vocab_hash", std::string());
  const auto rel = l.meta.value("relation_vocab_hash", std::string());
  if (ent != hex64(g.entities().fingerprint()))
    throw DataError("checkpoint entity vocabulary does not match the dataset");
  if (rel != hex64(g.relations().fingerprint()))
    throw DataError("checkpoint relation vocabulary does not match the dataset");
  return std::move(l.model);
}

KgcModel load_checkpoint(const std::filesystem::path& path) { return read_checkpoint(path).model; }

}  // namespace powerlink
