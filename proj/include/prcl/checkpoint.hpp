#pragma once

#include <stdexcept>
#include <string>

#include "prcl/network.hpp"

namespace prcl {

struct CheckpointMeta {
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  uint64_t seed = 0;
  std::string dataset_id;
};

struct Checkpoint {
  Network net;
  CheckpointMeta meta;
};

enum class CheckpointErrorCode { kBadMagic, kVersionMismatch, kTruncated, kChecksumMismatch, kBadHeader };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

// File layout: "PRCL" magic, u16 LE format version, u32 LE header length,
// JSON header (network spec + metadata), little-endian float64 parameter
// payload, trailing u32 LE CRC32 over everything before it.
void save_checkpoint(const std::string& path, const Network& net, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::string& path);

uint32_t crc32(const unsigned char* data, size_t len);

}  // namespace prcl
