#include "biasloss/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <set>
#include <sstream>

#include "biasloss/data.hpp"
#include "biasloss/errors.hpp"

namespace biasloss {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'L', 'C', 'K'};

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

template <typename U>
void push_le(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.insert(out.end(), buf, buf + sizeof(U));
}

template <typename U>
U read_le(std::span<const std::uint8_t> b, std::size_t at) {
  U v;
  std::memcpy(&v, b.data() + at, sizeof(U));
  return v;
}

std::uint64_t parse_u64(const std::string& s, int base, const std::string& what) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw CheckpointError("malformed " + what + " '" + s + "'");
  return v;
}

}  // namespace

template <typename T>
void Checkpoint::put(const std::string& name, const Tensor<T>& value) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
    throw CheckpointError("invalid entry name '" + name + "'");
  if (find(name)) throw CheckpointError("duplicate entry '" + name + "'");
  CheckpointEntry e;
  e.name = name;
  e.shape = value.shape();
  e.dtype = dtype_of<T>();
  e.bytes.resize(value.size() * sizeof(T));
  if (!e.bytes.empty()) std::memcpy(e.bytes.data(), value.ptr(), e.bytes.size());
  entries.push_back(std::move(e));
}

template <typename T>
Tensor<T> Checkpoint::get(const std::string& name) const {
  const CheckpointEntry* e = find(name);
  if (!e) throw CheckpointError("missing entry '" + name + "'");
  if (e->dtype != dtype_of<T>())
    throw CheckpointError("entry '" + name + "' has dtype " + std::string(dtype_name(e->dtype)) + ", expected " +
                          std::string(dtype_name(dtype_of<T>())));
  Tensor<T> out(e->shape, T{0});
  if (!e->bytes.empty()) std::memcpy(out.ptr(), e->bytes.data(), e->bytes.size());
  return out;
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  std::ostringstream manifest;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(config_hash));
  manifest << "config_hash " << hex << '\n';
  std::size_t offset = 0;
  for (const auto& e : entries) {
    manifest << e.name;
    for (std::size_t d : e.shape) manifest << ' ' << d;
    manifest << ' ' << dtype_name(e.dtype) << ' ' << offset << '\n';
    offset += e.bytes.size();
  }
  const std::string m = manifest.str();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  push_le<std::uint32_t>(out, kVersion);
  push_le<std::uint64_t>(out, m.size());
  out.insert(out.end(), m.begin(), m.end());
  for (const auto& e : entries) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  return out;
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  const auto version = read_le<std::uint32_t>(bytes, 4);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto mlen = read_le<std::uint64_t>(bytes, 8);
  if (mlen > bytes.size() - 16) throw CheckpointError("manifest length exceeds file size");
  const std::string manifest(reinterpret_cast<const char*>(bytes.data() + 16), mlen);
  const std::span<const std::uint8_t> blob = bytes.subspan(16 + mlen);

  Checkpoint ck;
  std::istringstream ms(manifest);
  std::string line;
  if (!std::getline(ms, line) || line.rfind("config_hash ", 0) != 0)
    throw CheckpointError("manifest lacks a config_hash line");
  ck.config_hash = parse_u64(line.substr(12), 16, "config hash");

  std::size_t expected_offset = 0;
  while (std::getline(ms, line)) {
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.size() < 3) throw CheckpointError("malformed manifest line '" + line + "'");
    CheckpointEntry e;
    e.name = tok.front();
    try {
      e.dtype = dtype_from_name(tok[tok.size() - 2]);
    } catch (const Error&) {
      throw CheckpointError("unknown dtype in manifest line '" + line + "'");
    }
    const std::size_t offset = parse_u64(tok.back(), 10, "offset");
    for (std::size_t i = 1; i + 2 < tok.size(); ++i) e.shape.push_back(parse_u64(tok[i], 10, "dimension"));
    const std::size_t size = shape_numel(e.shape) * dtype_size(e.dtype);
    if (offset != expected_offset) throw CheckpointError("entry '" + e.name + "' overlaps or leaves a gap");
    if (offset + size > blob.size()) throw CheckpointError("entry '" + e.name + "' extends past the blob");
    e.bytes.assign(blob.begin() + offset, blob.begin() + offset + size);
    expected_offset = offset + size;
    if (ck.find(e.name)) throw CheckpointError("duplicate entry '" + e.name + "'");
    ck.entries.push_back(std::move(e));
  }
  if (expected_offset != blob.size()) throw CheckpointError("blob has trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  try {
    write_file(path, encode());
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return decode(bytes);
}

template <typename T>
Checkpoint checkpoint_from_model(const MicroNet<T>& net, std::uint64_t config_hash) {
  Checkpoint ck;
  ck.config_hash = config_hash;
  const ParameterStore<T>& store = net.parameters();
  for (const auto& p : store.params()) ck.put(p.name, p.value);
  for (std::size_t i = 0; i < store.batchnorm_count(); ++i) {
    ck.put(store.batchnorm_name(i) + ".running_mean", store.batchnorm(i).running_mean);
    ck.put(store.batchnorm_name(i) + ".running_var", store.batchnorm(i).running_var);
  }
  return ck;
}

template <typename T>
void load_into_model(const Checkpoint& ck, MicroNet<T>& net) {
  ParameterStore<T>& store = net.parameters();
  std::set<std::string> used;
  auto fetch = [&](const std::string& name, Tensor<T>& dst) {
    Tensor<T> v = ck.get<T>(name);
    if (v.shape() != dst.shape())
      throw CheckpointError("entry '" + name + "' has shape " + shape_str(v.shape()) + ", model expects " +
                            shape_str(dst.shape()));
    dst = std::move(v);
    used.insert(name);
  };
  for (auto& p : store.params()) fetch(p.name, p.value);
  for (std::size_t i = 0; i < store.batchnorm_count(); ++i) {
    fetch(store.batchnorm_name(i) + ".running_mean", store.batchnorm(i).running_mean);
    fetch(store.batchnorm_name(i) + ".running_var", store.batchnorm(i).running_var);
  }
  for (const auto& e : ck.entries)
    if (!used.count(e.name)) throw CheckpointError("checkpoint entry '" + e.name + "' is not part of the model");
}

template void Checkpoint::put<float>(const std::string&, const Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> Checkpoint::get<float>(const std::string&) const;
template Tensor<double> Checkpoint::get<double>(const std::string&) const;
template Checkpoint checkpoint_from_model<float>(const MicroNet<float>&, std::uint64_t);
template Checkpoint checkpoint_from_model<double>(const MicroNet<double>&, std::uint64_t);
template void load_into_model<float>(const Checkpoint&, MicroNet<float>&);
template void load_into_model<double>(const Checkpoint&, MicroNet<double>&);

}  // namespace biasloss
