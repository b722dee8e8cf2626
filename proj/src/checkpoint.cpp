// SPDX-License-Identifier: Apache-2.0
#include "ciard/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ciard/errors.hpp"

namespace ciard {

namespace {

constexpr std::string_view kMagic = "ciard-checkpoint 1";

void append_le(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float read_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::string single_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

Shape parse_shape(const std::string& s) {
  Shape out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    if (part.empty()) throw FormatError("bad shape '" + s + "'");
    out.push_back(std::stoul(part));
  }
  return out;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ostringstream header;
  header << kMagic << '\n';
  header << "spec " << model.spec().to_string() << '\n';
  header << "seed " << model.seed() << '\n';
  header << "lineage " << single_line(model.lineage()) << '\n';
  header << "tensors " << model.params().size() << '\n';
  std::string payload;
  payload.reserve(model.num_parameters() * 4);
  for (const auto& p : model.params()) {
    header << p.name << ' ' << shape_to_string(p.value.shape()) << " f32 " << payload.size() << '\n';
    for (float v : p.value.data()) append_le(payload, v);
  }
  header << "end\n";

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + tmp.string() + "' for writing");
    const std::string h = header.str();
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path, const std::optional<ModelSpec>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("truncated checkpoint manifest");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  auto expect_key = [&](const std::string& key) {
    std::string line = next_line();
    if (line.rfind(key + " ", 0) != 0 && line != key) throw FormatError("expected '" + key + "' record");
    return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
  };

  if (next_line() != kMagic) throw FormatError("not a checkpoint file: '" + path.string() + "'");
  ModelSpec spec = ModelSpec::from_string(expect_key("spec"));
  if (expected && !(*expected == spec)) {
    throw IncompatibleCheckpointError("checkpoint spec '" + spec.to_string() + "' incompatible with expected '" +
                                      expected->to_string() + "'");
  }
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::string lineage;
  struct Record {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Record> records;
  try {
    seed = std::stoull(expect_key("seed"));
    lineage = expect_key("lineage");
    count = std::stoul(expect_key("tensors"));
    for (std::size_t i = 0; i < count; ++i) {
      std::stringstream ss(next_line());
      std::string name, shape, dtype;
      std::size_t offset = 0;
      if (!(ss >> name >> shape >> dtype >> offset)) throw FormatError("bad tensor record");
      if (dtype != "f32") throw FormatError("unsupported dtype '" + dtype + "'");
      records.push_back({name, parse_shape(shape), offset});
    }
  } catch (const std::logic_error&) {
    throw FormatError("malformed checkpoint manifest");
  }
  if (next_line() != "end") throw FormatError("missing manifest terminator");

  const auto layout = param_layout(spec);
  if (layout.size() != records.size()) throw IncompatibleCheckpointError("tensor count does not match spec");
  const std::size_t data_begin = pos;
  std::size_t expected_offset = 0;
  ParamSet params;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.name != layout[i].first || r.shape != layout[i].second) {
      throw IncompatibleCheckpointError("tensor '" + r.name + "' " + shape_to_string(r.shape) +
                                        " does not match spec entry '" + layout[i].first + "'");
    }
    if (r.offset != expected_offset) throw FormatError("unexpected byte offset for '" + r.name + "'");
    const std::size_t n = shape_numel(r.shape);
    if (data_begin + r.offset + 4 * n > bytes.size()) throw FormatError("truncated checkpoint payload");
    std::vector<float> data(n);
    const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + data_begin + r.offset;
    for (std::size_t k = 0; k < n; ++k) data[k] = read_le(base + 4 * k);
    params.add(r.name, Tensor(r.shape, std::move(data)));
    expected_offset += 4 * n;
  }
  if (data_begin + expected_offset != bytes.size()) throw FormatError("trailing bytes after checkpoint payload");

  Model model(std::move(spec), std::move(params));
  model.set_seed(seed);
  model.set_lineage(lineage);
  return model;
}

}  // namespace ciard
