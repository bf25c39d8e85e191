#include "nco/train/ncof.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nco/policy/policy.hpp"

namespace nco {

static_assert(std::endian::native == std::endian::little, "NCOF I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "NCOF1";
constexpr std::size_t kMagicLen = 5;

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() { return "f32"; }
template <>
const char* dtype_name<std::int32_t>() { return "i32"; }
template <>
const char* dtype_name<std::uint8_t>() { return "u8"; }

bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

}  // namespace

const NcofArray* NcofFile::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

template <typename T>
const Tensor<T>& NcofFile::get(const std::string& name) const {
  const NcofArray* a = find(name);
  if (!a) fail(ErrorCode::MissingRequired, "container has no array " + name);
  const auto* t = std::get_if<Tensor<T>>(&a->data);
  if (!t) fail(ErrorCode::TypeError, "array " + name + " has dtype other than " + dtype_name<T>());
  return *t;
}

template const TensorF& NcofFile::get<float>(const std::string&) const;
template const TensorI& NcofFile::get<std::int32_t>(const std::string&) const;
template const TensorB& NcofFile::get<std::uint8_t>(const std::string&) const;

std::string encode_ncof(const NcofFile& file) {
  nlohmann::json header = nlohmann::json::array();
  std::string body;
  for (const auto& a : file.arrays) {
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::Scalar;
          header.push_back({{"name", a.name}, {"dtype", dtype_name<T>()}, {"shape", t.shape()}});
          body.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(T));
        },
        a.data);
  }
  if (!file.meta.is_null() && !file.meta.empty()) header.push_back({{"meta", file.meta}});
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());
  std::string out(kMagic, kMagicLen);
  out.append(reinterpret_cast<const char*>(&len), 4);
  out += text;
  out += body;
  return out;
}

NcofFile decode_ncof(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0)
    fail(ErrorCode::MagicMismatch, "not an NCOF1 container");
  if (bytes.size() < kMagicLen + 4) fail(ErrorCode::Io, "NCOF header length is truncated");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + kMagicLen, 4);
  std::size_t pos = kMagicLen + 4;
  if (bytes.size() - pos < len) fail(ErrorCode::Io, "NCOF header is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, std::string("NCOF header is not valid JSON: ") + e.what());
  }
  if (!header.is_array()) fail(ErrorCode::Io, "NCOF header must be a JSON array");
  pos += len;
  NcofFile file;
  for (const auto& entry : header) {
    if (entry.contains("meta") && !entry.contains("name")) {
      file.meta = entry["meta"];
      continue;
    }
    Shape shape;
    std::string name, dtype;
    try {
      name = entry.at("name").get<std::string>();
      dtype = entry.at("dtype").get<std::string>();
      shape = entry.at("shape").get<Shape>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Io, std::string("bad NCOF array descriptor: ") + e.what());
    }
    auto read = [&](auto tag) {
      using T = decltype(tag);
      Tensor<T> t(shape);
      const std::size_t n = static_cast<std::size_t>(t.size()) * sizeof(T);
      if (bytes.size() - pos < n) fail(ErrorCode::Io, "NCOF array " + name + " is truncated");
      std::memcpy(t.data(), bytes.data() + pos, n);
      pos += n;
      file.arrays.push_back({name, std::move(t)});
    };
    if (dtype == "f32")
      read(float{});
    else if (dtype == "i32")
      read(std::int32_t{});
    else if (dtype == "u8")
      read(std::uint8_t{});
    else
      fail(ErrorCode::TypeError, "unknown NCOF dtype " + dtype);
  }
  if (pos != bytes.size()) fail(ErrorCode::Io, "NCOF file has trailing bytes after the declared arrays");
  return file;
}

void write_ncof(const std::string& path, const NcofFile& file) {
  const std::string bytes = encode_ncof(file);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "write failed for " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorCode::Io, "cannot move " + tmp + " to " + path);
}

NcofFile read_ncof(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_ncof(ss.str());
}

void append_params(NcofFile& file, const ParamSet<float>& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) file.arrays.push_back({prefix + params.name(i), params[i].value});
}

ParamSet<float> extract_params(const NcofFile& file, const std::string& prefix) {
  ParamSet<float> out;
  for (const auto& a : file.arrays) {
    if (a.name.compare(0, prefix.size(), prefix) != 0) continue;
    const auto* t = std::get_if<TensorF>(&a.data);
    if (!t) fail(ErrorCode::TypeError, "parameter " + a.name + " is not f32");
    const std::string name = a.name.substr(prefix.size());
    out.add(name, *t, !(ends_with(name, "running_mean") || ends_with(name, "running_var")));
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamSet<float>& params, const nlohmann::json& meta) {
  NcofFile file;
  append_params(file, params);
  file.meta = meta.is_null() ? nlohmann::json::object() : meta;
  write_ncof(path, file);
}

NcofFile load_checkpoint(const std::string& path) { return read_ncof(path); }

void load_checkpoint_into(const std::string& path, ParamSet<float>& params, const std::string& prefix) {
  const NcofFile file = read_ncof(path);
  ParamSet<float> stored = extract_params(file, prefix);
  load_params(params, stored);
}

NcofFile dataset_file(const InstanceBatch& in) {
  NcofFile file;
  file.arrays.push_back({"locs", in.locs});
  for (auto [name, t] : {std::pair<const char*, const TensorF*>{"demand", &in.demand},
                         {"prize", &in.prize},
                         {"penalty", &in.penalty},
                         {"max_length", &in.max_length},
                         {"required_prize", &in.required_prize}})
    if (!t->empty()) file.arrays.push_back({name, *t});
  file.meta = {{"env", std::string(env_name(in.env))}};
  if (in.env == EnvId::PDP) file.meta["num_pairs"] = in.num_pairs;
  return file;
}

InstanceBatch dataset_from(const NcofFile& file) {
  if (!file.meta.contains("env")) fail(ErrorCode::MissingRequired, "dataset has no env in its metadata");
  InstanceBatch in;
  in.env = parse_env(file.meta["env"].get<std::string>());
  in.locs = file.get<float>("locs");
  if (in.locs.rank() != 3 || in.locs.dim(2) != 2) fail(ErrorCode::ShapeMismatchOnLoad, "locs must be [B, N, 2]");
  for (auto [name, t] : {std::pair<const char*, TensorF*>{"demand", &in.demand},
                         {"prize", &in.prize},
                         {"penalty", &in.penalty},
                         {"max_length", &in.max_length},
                         {"required_prize", &in.required_prize}})
    if (file.find(name)) *t = file.get<float>(name);
  if (in.env == EnvId::PDP) in.num_pairs = file.meta.value("num_pairs", (in.nodes() - 1) / 2);
  return in;
}

void write_dataset(const InstanceBatch& instances, const std::string& path) {
  write_ncof(path, dataset_file(instances));
}

InstanceBatch read_dataset(const std::string& path) { return dataset_from(read_ncof(path)); }

}  // namespace nco
