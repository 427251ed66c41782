#include "fvnce/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fvnce::diff {

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'V', 'N', 'C', 'E', 'C', 'K', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamVector& params, std::uint64_t seed,
                     std::int64_t step, const nlohmann::json& metadata) {
  nlohmann::json header = metadata;
  header["slices"] = nlohmann::json::array();
  for (const auto& s : params.slices()) {
    header["slices"].push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  }
  header["count"] = params.size();
  header["seed"] = seed;
  header["step"] = step;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic.data(), kMagic.size());
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (Index i = 0; i < params.size(); ++i) {
    std::uint64_t bits = 0;
    const double v = params.values()(i);
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(os, bits);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint64_t len = get_u64(is);
  if (len > (1ULL << 30)) throw std::runtime_error("checkpoint: implausible header length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint: truncated header");

  Checkpoint ck;
  ck.header = nlohmann::json::parse(text);
  for (const auto& s : ck.header.at("slices")) {
    ck.params.add(s.at("name").get<std::string>(), s.at("rows").get<Index>(),
                  s.at("cols").get<Index>());
  }
  if (ck.header.at("count").get<Index>() != ck.params.size()) {
    throw std::runtime_error("checkpoint: slice sizes disagree with count");
  }
  for (Index i = 0; i < ck.params.size(); ++i) {
    const std::uint64_t bits = get_u64(is);
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof v);
    ck.params.values()(i) = v;
  }
  return ck;
}

}  // namespace fvnce::diff
