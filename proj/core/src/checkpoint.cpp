#include "sgdet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "sgdet/errors.hpp"

namespace sgdet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'G', 'D', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::filesystem::path& path) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw FormatError("checkpoint " + path.string() + ": truncated");
  }
  return value;
}

std::string take_string(std::istream& is, std::uint32_t length, const std::filesystem::path& path) {
  std::string s(length, '\0');
  if (length && !is.read(s.data(), length)) {
    throw FormatError("checkpoint " + path.string() + ": truncated string");
  }
  return s;
}

}  // namespace

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ConfigError("unknown parameter " + name);
}

Tensor& ParameterSet::get(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw ConfigError("unknown parameter " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const std::string& metadata) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(metadata.size()));
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put<std::uint64_t>(os, d);
    const auto values = tensor.data();
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw FormatError("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = take<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + ": unsupported version " +
                      std::to_string(version));
  }
  Checkpoint ck;
  ck.metadata = take_string(is, take<std::uint32_t>(is, path), path);
  const auto count = take<std::uint32_t>(is, path);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = take_string(is, take<std::uint32_t>(is, path), path);
    const auto rank = take<std::uint32_t>(is, path);
    if (rank > 8) throw FormatError("checkpoint " + path.string() + ": implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(take<std::uint64_t>(is, path));
    std::vector<double> values(shape_numel(shape));
    if (!values.empty() &&
        !is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw FormatError("checkpoint " + path.string() + ": truncated values for " + name);
    }
    ck.tensors.emplace_back(std::move(name), Tensor::from_vector(std::move(shape), std::move(values)));
  }
  return ck;
}

void load_into(const Checkpoint& checkpoint, ParameterSet& params,
               const std::vector<std::string>& optional_prefixes) {
  for (auto& [name, target] : params) {
    auto it = std::find_if(checkpoint.tensors.begin(), checkpoint.tensors.end(),
                           [&](const auto& e) { return e.first == name; });
    if (it == checkpoint.tensors.end()) {
      const bool optional =
          std::any_of(optional_prefixes.begin(), optional_prefixes.end(),
                      [&](const std::string& p) { return name.rfind(p, 0) == 0; });
      if (optional) continue;
      throw FormatError("checkpoint lacks parameter " + name);
    }
    if (it->second.shape() != target.shape()) {
      throw FormatError("checkpoint parameter " + name + " has shape " +
                        shape_string(it->second.shape()) + ", model expects " +
                        shape_string(target.shape()));
    }
    auto dst = target.mutable_data();
    std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
  }
}

}  // namespace sgdet
