#include "prcl/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"

namespace prcl {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'C', 'L'};
constexpr uint16_t kFormatVersion = 1;

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> table{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

void put_u16(std::vector<unsigned char>& out, uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<unsigned char>& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

uint16_t get_u16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

double get_f64(const unsigned char* p) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

uint32_t crc32(const unsigned char* data, size_t len) {
  static const std::array<uint32_t, 256> table = make_crc_table();
  uint32_t c = 0xffffffffu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

void save_checkpoint(const std::string& path, const Network& net, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["schema_version"] = 1;
  header["arch"] = arch_str(net.spec);
  header["param_count"] = net.param_count();
  header["final_loss"] = meta.final_loss;
  header["final_grad_norm"] = meta.final_grad_norm;
  header["seed"] = meta.seed;
  header["dataset_id"] = meta.dataset_id;
  std::string header_text = header.dump();

  std::vector<unsigned char> bytes;
  bytes.insert(bytes.end(), kMagic, kMagic + 4);
  put_u16(bytes, kFormatVersion);
  put_u32(bytes, static_cast<uint32_t>(header_text.size()));
  bytes.insert(bytes.end(), header_text.begin(), header_text.end());
  for (double v : net.flat_params()) put_f64(bytes, v);
  put_u32(bytes, crc32(bytes.data(), bytes.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 10) throw CheckpointError(CheckpointErrorCode::kTruncated, path + ": file too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrorCode::kBadMagic, path + ": not a checkpoint file");
  }
  uint16_t version = get_u16(bytes.data() + 4);
  if (version != kFormatVersion) {
    throw CheckpointError(CheckpointErrorCode::kVersionMismatch,
                          path + ": format version " + std::to_string(version) + ", expected " +
                              std::to_string(kFormatVersion));
  }
  uint32_t header_len = get_u32(bytes.data() + 6);
  size_t header_end = 10 + static_cast<size_t>(header_len);
  if (bytes.size() < header_end + 4) {
    throw CheckpointError(CheckpointErrorCode::kTruncated, path + ": header extends past end of file");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 10, bytes.begin() + static_cast<int64_t>(header_end));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorCode::kBadHeader, path + ": bad header: " + e.what());
  }

  int64_t param_count;
  std::string arch;
  CheckpointMeta meta;
  try {
    param_count = header.at("param_count").get<int64_t>();
    arch = header.at("arch").get<std::string>();
    meta.final_loss = header.at("final_loss").get<double>();
    meta.final_grad_norm = header.at("final_grad_norm").get<double>();
    meta.seed = header.at("seed").get<uint64_t>();
    meta.dataset_id = header.at("dataset_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorCode::kBadHeader, path + ": bad header: " + e.what());
  }

  size_t expected = header_end + static_cast<size_t>(param_count) * 8 + 4;
  if (bytes.size() < expected) {
    throw CheckpointError(CheckpointErrorCode::kTruncated,
                          path + ": payload truncated (" + std::to_string(bytes.size()) + " of " +
                              std::to_string(expected) + " bytes)");
  }
  if (bytes.size() != expected) {
    throw CheckpointError(CheckpointErrorCode::kChecksumMismatch, path + ": trailing bytes after checksum");
  }
  uint32_t stored = get_u32(bytes.data() + bytes.size() - 4);
  uint32_t computed = crc32(bytes.data(), bytes.size() - 4);
  if (stored != computed) {
    throw CheckpointError(CheckpointErrorCode::kChecksumMismatch, path + ": checksum mismatch");
  }

  Checkpoint cp;
  cp.net = build_network(parse_arch(arch), 0);
  if (cp.net.param_count() != param_count) {
    throw CheckpointError(CheckpointErrorCode::kBadHeader,
                          path + ": header param_count disagrees with architecture");
  }
  std::vector<double> flat(static_cast<size_t>(param_count));
  for (int64_t i = 0; i < param_count; ++i) flat[static_cast<size_t>(i)] = get_f64(bytes.data() + header_end + i * 8);
  cp.net.set_flat_params(flat);
  cp.meta = meta;
  return cp;
}

}  // namespace prcl
