#include "umrl/numerics/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <vector>

#include "umrl/numerics/error.hpp"

namespace umrl {

namespace fs = std::filesystem;

nlohmann::json layout_to_json(const ParamLayout& layout) {
  auto segs = nlohmann::json::array();
  for (const auto& s : layout.segments()) segs.push_back({{"name", s.name}, {"shape", s.shape}});
  return segs;
}

LayoutPtr layout_from_json(const nlohmann::json& segments) {
  std::vector<Segment> segs;
  for (const auto& s : segments) segs.push_back({s.at("name").get<std::string>(), s.at("shape").get<std::vector<Index>>()});
  return make_layout(std::move(segs));
}

fs::path checkpoint_bin_path(const fs::path& base) { return fs::path(base.string() + ".bin"); }
fs::path checkpoint_json_path(const fs::path& base) { return fs::path(base.string() + ".json"); }

bool checkpoint_exists(const fs::path& base) {
  return fs::exists(checkpoint_bin_path(base)) && fs::exists(checkpoint_json_path(base));
}

void save_checkpoint(const fs::path& base, const ParamVector& params, nlohmann::json meta) {
  params.require_finite("save_checkpoint");
  if (base.has_parent_path()) fs::create_directories(base.parent_path());

  std::vector<unsigned char> bytes(static_cast<std::size_t>(params.size()) * 8);
  for (Index i = 0; i < params.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(params[i]);
    for (int b = 0; b < 8; ++b) bytes[static_cast<std::size_t>(i) * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  {
    std::ofstream out(checkpoint_bin_path(base), std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + checkpoint_bin_path(base).string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (meta.is_null()) meta = nlohmann::json::object();
  meta["segments"] = layout_to_json(params.layout());
  std::ofstream out(checkpoint_json_path(base), std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + checkpoint_json_path(base).string());
  out << meta.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& base) {
  std::ifstream jin(checkpoint_json_path(base));
  if (!jin) throw RuntimeFailure("missing checkpoint metadata " + checkpoint_json_path(base).string());
  Checkpoint ck;
  ck.meta = nlohmann::json::parse(jin);
  auto layout = layout_from_json(ck.meta.at("segments"));

  std::ifstream bin(checkpoint_bin_path(base), std::ios::binary);
  if (!bin) throw RuntimeFailure("missing checkpoint data " + checkpoint_bin_path(base).string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (bytes.size() != static_cast<std::size_t>(layout->size()) * 8)
    throw DimensionError("checkpoint " + base.string() + ": " + std::to_string(bytes.size()) +
                         " bytes, layout expects " + std::to_string(layout->size() * 8));
  Eigen::VectorXd values(layout->size());
  for (Index i = 0; i < layout->size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[static_cast<std::size_t>(i) * 8 + b]} << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  ck.params = ParamVector(std::move(layout), std::move(values));
  return ck;
}

}  // namespace umrl
