#include "ecgr/checkpoint.hpp"

#include "ecgr/io.hpp"

#include <fmt/format.h>

#include <cstring>

namespace ecgr {

namespace {

constexpr char kMagic[8] = {'E', 'C', 'G', 'R', 'C', 'K', 'P', 'T'};

using Net = nn::Sequential<float>;

// Every stored tensor in a fixed order: parameters, then buffers.
std::vector<std::pair<std::string, nn::Matrix<float>*>> tensors(Net& net) {
  std::vector<std::pair<std::string, nn::Matrix<float>*>> out;
  int i = 0;
  for (auto* p : net.parameters()) out.emplace_back(fmt::format("param{}.{}", i++, p->name), &p->value);
  for (auto& [name, m] : net.buffers()) out.emplace_back("buffer" + name, m);
  return out;
}

template <typename Int>
void put(std::string& out, Int v) {
  for (std::size_t b = 0; b < sizeof(Int); ++b) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff));
}

template <typename Int>
Int get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(Int) > in.size()) throw ValidationError("truncated checkpoint");
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < sizeof(Int); ++b)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  pos += sizeof(Int);
  return static_cast<Int>(v);
}

void write(const std::filesystem::path& path, nlohmann::json header, Net net, const CheckpointMeta& meta) {
  header["descriptor"] = net.descriptor();
  header["parameter_count"] = net.parameter_count();
  header["config_hash"] = meta.config_hash;
  header["seed"] = meta.seed;
  header["extra"] = meta.extra;
  nlohmann::json list = nlohmann::json::array();
  std::string payload;
  for (auto& [name, m] : tensors(net)) {
    list.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    payload.append(reinterpret_cast<const char*>(m->data()), static_cast<std::size_t>(m->size()) * sizeof(float));
  }
  header["tensors"] = list;
  const std::string head = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, head.size());
  out += head;
  out += payload;
  io::write_file_atomic(path, out);
}

std::pair<nlohmann::json, std::string> read(const std::filesystem::path& path) {
  std::string bytes = io::read_file(path);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw ValidationError(path.string() + " is not a checkpoint file");
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw ValidationError(fmt::format("{} has checkpoint version {}, expected {}", path.string(), version,
                                      kCheckpointVersion));
  const auto len = get<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw ValidationError("truncated checkpoint header in " + path.string());
  nlohmann::json header = nlohmann::json::parse(bytes.substr(pos, len));
  return {std::move(header), bytes.substr(pos + len)};
}

void restore(Net& net, const nlohmann::json& header, const std::string& payload, const std::filesystem::path& path) {
  auto list = tensors(net);
  const auto& stored = header.at("tensors");
  if (stored.size() != list.size())
    throw ValidationError(fmt::format("{} holds {} tensors, the architecture needs {}", path.string(), stored.size(),
                                      list.size()));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto& [name, m] = list[i];
    if (stored[i].at("name").get<std::string>() != name || stored[i].at("rows").get<Eigen::Index>() != m->rows() ||
        stored[i].at("cols").get<Eigen::Index>() != m->cols())
      throw ValidationError(fmt::format("{}: tensor {} does not match the architecture", path.string(), i));
    const auto bytes = static_cast<std::size_t>(m->size()) * sizeof(float);
    if (offset + bytes > payload.size()) throw ValidationError("truncated checkpoint payload in " + path.string());
    std::memcpy(m->data(), payload.data() + offset, bytes);
    offset += bytes;
  }
  if (offset != payload.size()) throw ValidationError("trailing bytes in " + path.string());
}

void expect_kind(const nlohmann::json& header, const char* kind, const std::filesystem::path& path) {
  if (header.at("kind").get<std::string>() != kind)
    throw ValidationError(fmt::format("{} holds a {}, expected a {}", path.string(),
                                      header.at("kind").get<std::string>(), kind));
}

}  // namespace

std::string config_hash(const nlohmann::json& config) { return io::sha256_hex(config.dump()); }

void save_checkpoint(const std::filesystem::path& path, const ClassifierModel& model, const CheckpointMeta& meta) {
  nlohmann::json header = {{"kind", "classifier"},
                           {"num_classes", model.num_classes()},
                           {"image_size", model.image_size()},
                           {"arch", model.arch()},
                           {"trainable_scope", model.trainable_scope() == TrainableScope::all ? "all" : "fc_only"}};
  write(path, std::move(header), model.net(), meta);
}

void save_checkpoint(const std::filesystem::path& path, const GeneratorModel& model, const CheckpointMeta& meta) {
  nlohmann::json header = {{"kind", "generator"},
                           {"noise_dim", model.noise_dim()},
                           {"image_size", model.image_size()},
                           {"class_tag", class_name(model.class_tag())},
                           {"id", model.id()},
                           {"arch", model.arch()}};
  write(path, std::move(header), model.net(), meta);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) { return {read(path).first}; }

ClassifierModel load_classifier(const std::filesystem::path& path) {
  auto [header, payload] = read(path);
  expect_kind(header, "classifier", path);
  auto model = build_classifier<float>(header.at("num_classes").get<int>(), header.at("image_size").get<int>(),
                                       header.at("arch").get<ClassifierArch>(), 0);
  restore(model.net(), header, payload, path);
  model.set_trainable_scope(header.at("trainable_scope").get<std::string>() == "all" ? TrainableScope::all
                                                                                    : TrainableScope::fc_only);
  return model;
}

GeneratorModel load_generator(const std::filesystem::path& path) {
  auto [header, payload] = read(path);
  expect_kind(header, "generator", path);
  const auto tag = class_from_name(header.at("class_tag").get<std::string>());
  if (!tag) throw ValidationError(path.string() + " names an unknown class");
  auto model = build_generator<float>(header.at("noise_dim").get<int>(), header.at("image_size").get<int>(), *tag,
                                      header.at("arch").get<GeneratorArch>(), 0);
  restore(model.net(), header, payload, path);
  model.set_id(header.at("id").get<std::string>());
  return model;
}

}  // namespace ecgr
