#include "cfrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "cfrec/errors.hpp"

namespace cfrec {
namespace {

constexpr const char* kManifest = "model.json";
constexpr const char* kTensor = "model.bin";

std::uint64_t to_little(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::little) {
    return x;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((x >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace

void save_checkpoint(const Model& model, const TrainConfig& train, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& s = model.shape();
  nlohmann::json j;
  j["model_kind"] = to_string(s.kind);
  j["d"] = s.d;
  j["hidden_widths"] = s.hidden_widths;
  j["num_users"] = s.num_users;
  j["num_items"] = s.num_items;
  j["num_params"] = s.num_params;
  j["seed"] = train.seed;
  j["rating_scale"] = to_string(s.rating_scale);
  j["lr"] = train.lr;
  j["epochs"] = train.epochs;
  j["batch_size"] = train.batch_size;
  j["tensor"] = kTensor;
  {
    std::ofstream out(dir / kManifest);
    if (!out) throw InputError("cannot write " + (dir / kManifest).string());
    out << j.dump(2) << '\n';
  }
  std::ofstream bin(dir / kTensor, std::ios::binary);
  if (!bin) throw InputError("cannot write " + (dir / kTensor).string());
  for (double p : model.params()) {
    const std::uint64_t le = to_little(std::bit_cast<std::uint64_t>(p));
    char bytes[8];
    std::memcpy(bytes, &le, 8);
    bin.write(bytes, 8);
  }
  if (!bin) throw InputError("failed writing " + (dir / kTensor).string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw InputError("cannot read " + (dir / kManifest).string());
  Checkpoint c;
  ModelShape shape;
  try {
    const auto j = nlohmann::json::parse(in);
    c.train.d = j.at("d").get<std::size_t>();
    c.train.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    c.train.seed = j.at("seed").get<std::uint64_t>();
    c.train.rating_scale = parse_rating_scale(j.at("rating_scale").get<std::string>());
    c.train.lr = j.at("lr").get<double>();
    c.train.epochs = j.at("epochs").get<std::size_t>();
    c.train.batch_size = j.at("batch_size").get<std::size_t>();
    shape = ModelShape::make(parse_model_kind(j.at("model_kind").get<std::string>()),
                             j.at("num_users").get<std::size_t>(), j.at("num_items").get<std::size_t>(),
                             c.train.d, c.train.hidden_widths, c.train.rating_scale);
    if (j.contains("num_params") && j.at("num_params").get<std::size_t>() != shape.num_params) {
      throw InputError("manifest num_params disagrees with its shape");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad checkpoint manifest " + (dir / kManifest).string() + ": " + e.what());
  }
  c.train.validate();

  std::ifstream bin(dir / kTensor, std::ios::binary | std::ios::ate);
  if (!bin) throw InputError("cannot read " + (dir / kTensor).string());
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes != shape.num_params * 8) {
    throw InputError("checkpoint tensor has " + std::to_string(bytes) + " bytes, expected " +
                     std::to_string(shape.num_params * 8));
  }
  bin.seekg(0);
  std::vector<double> params(shape.num_params);
  for (double& p : params) {
    char raw[8];
    bin.read(raw, 8);
    std::uint64_t le = 0;
    std::memcpy(&le, raw, 8);
    p = std::bit_cast<double>(to_little(le));
  }
  c.model = Model(std::move(shape), std::move(params));
  return c;
}

}  // namespace cfrec
