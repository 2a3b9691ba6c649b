// Transfer and switching cost parameters shared by profiles and the migration model.
#pragma once

namespace tpsim {

struct CostModelParams {
  double copy_bw_gbps = 500.0;             // device-local gather into a staging buffer
  double link_bw_gbps = 250.0;             // GPU-to-GPU
  double per_transfer_overhead_us = 100.0; // fixed cost of each issued transfer
  double page_bytes = 64.0 * 1024;
  double chunk_bytes = 128.0 * 1024 * 1024;
  double handshake_ms = 1.0;
  double reload_ms = 30000.0;       // restart engine and reload weights
  double kernel_init_ms = 10000.0;  // weights resident, kernels and graphs rebuilt

  /// Throws ValidationError if any field is non-positive.
  void validate() const;

  bool operator==(const CostModelParams&) const = default;
};

}  // namespace tpsim
