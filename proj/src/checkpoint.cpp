#include "spseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace spseg {
namespace {

constexpr char kMagic[6] = {'S', 'P', 'S', 'E', 'G', '1'};

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::filesystem::path& path) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw CheckpointError("truncated checkpoint " + path.string());
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    for (Index i = 0; i < t.size(); ++i) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(t[i]));
  }
  if (!os) throw CheckpointError("write failed for " + path.string());
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError(path.string() + " is not an SPSEG1 checkpoint");
  const auto count = get_le<std::uint64_t>(is, path);
  std::vector<NamedTensor> out;
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto name_len = get_le<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointError("truncated checkpoint " + path.string());
    const auto rank = get_le<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<Index>(get_le<std::uint64_t>(is, path));
    Tensor<float> t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_le<std::uint32_t>(is, path));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<Scalar>& params) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.emplace_back(p.name, p.value.template cast<float>());
  write_tensor_file(path, tensors);
}

template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, ParamSet<Scalar>& params) {
  auto tensors = read_tensor_file(path);
  std::map<std::string, Tensor<float>*> by_name;
  for (auto& [name, t] : tensors) by_name[name] = &t;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError(path.string() + " lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.value.shape())
      throw CheckpointError("parameter '" + p.name + "' has shape " + to_string(it->second->shape()) +
                            " in checkpoint, expected " + to_string(p.value.shape()));
    p.value = it->second->template cast<Scalar>();
  }
}

template <typename Scalar>
void save_optimizer_state(const std::filesystem::path& path, const ParamSet<Scalar>& params, long iteration) {
  std::vector<NamedTensor> tensors;
  tensors.emplace_back("iteration", Tensor<float>(Shape{1}, {static_cast<float>(iteration)}));
  for (const auto& p : params)
    if (!p.velocity.empty()) tensors.emplace_back(p.name, p.velocity.template cast<float>());
  write_tensor_file(path, tensors);
}

template <typename Scalar>
long load_optimizer_state(const std::filesystem::path& path, ParamSet<Scalar>& params) {
  long iteration = 0;
  for (auto& [name, t] : read_tensor_file(path)) {
    if (name == "iteration") {
      iteration = static_cast<long>(t[0]);
    } else if (params.contains(name)) {
      auto& p = params.at(name);
      if (t.shape() != p.value.shape()) throw CheckpointError("velocity for '" + name + "' has wrong shape");
      p.velocity = t.template cast<Scalar>();
    }
  }
  return iteration;
}

template void save_checkpoint<float>(const std::filesystem::path&, const ParamSet<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParamSet<double>&);
template void load_checkpoint<float>(const std::filesystem::path&, ParamSet<float>&);
template void load_checkpoint<double>(const std::filesystem::path&, ParamSet<double>&);
template void save_optimizer_state<float>(const std::filesystem::path&, const ParamSet<float>&, long);
template void save_optimizer_state<double>(const std::filesystem::path&, const ParamSet<double>&, long);
template long load_optimizer_state<float>(const std::filesystem::path&, ParamSet<float>&);
template long load_optimizer_state<double>(const std::filesystem::path&, ParamSet<double>&);

}  // namespace spseg
