#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nco/policy/policy.hpp"

namespace nco {

/// Affine map of the plane: (x, y) -> (a x + b y + e, c x + d y + f).
struct PlaneMap {
  double a = 1, b = 0, c = 0, d = 1, e = 0, f = 0;

  static PlaneMap identity() { return {}; }
  /// Element k (0..7) of the symmetry group of the unit square; 0 is the identity.
  static PlaneMap dihedral(int k);
  /// Rotation by theta about (0.5, 0.5), optionally preceded by x -> 1 - x.
  static PlaneMap rotation(double theta, bool reflect);
};

/// Copy of the instances with every coordinate mapped; node attributes are kept.
InstanceBatch transform(const InstanceBatch& in, const PlaneMap& map);

/// The 8 dihedral copies, identity first.
std::vector<InstanceBatch> dihedral8(const InstanceBatch& in);

/// K maps: the dihedral group first, then seeded random rotation+reflection.
std::vector<PlaneMap> augmentation_maps(Index k, std::uint64_t seed);

/// B*K instances, instance-major: row b*K + k is instance b under map k.
InstanceBatch augment(const InstanceBatch& in, const std::vector<PlaneMap>& maps);

enum class SchemeKind { Greedy, Sampling, Multistart, Augmentation, MultistartAugmentation };

struct DecodeScheme {
  SchemeKind kind = SchemeKind::Greedy;
  Index samples = 1;   // sampling M
  Index starts = 0;    // multistart N; 0 means every admissible start
  Index augments = 1;  // augmentation K (16 for the combined scheme)

  static DecodeScheme parse(const std::string& text);
  std::string name() const;
};

struct DecodeResult {
  TensorI actions;            // [B, T] best trajectory per instance
  TensorF reward;             // [B] its reward (in the copy's own coordinates)
  std::vector<double> cost;   // [B] objective: -reward, or the prize for OP
  Index samples = 0;          // rollouts per instance
  double seconds = 0.0;
};

/// Evaluates the policy under a decoding scheme. Candidates of one instance
/// are compared by reward; ties keep the lowest candidate index.
DecodeResult decode(Policy<float>& policy, const InstanceBatch& in, const DecodeScheme& scheme, std::uint64_t seed = 0,
                    Index chunk_rows = 4096);

/// Admissible forced first actions; the scheme's N must not exceed their count.
std::vector<Index> multistart_actions(const InstanceBatch& in, Index starts);

/// Percentage gap to a best-known value: (cost - bks) / |bks| for minimization,
/// (bks - value) / bks for maximization.
double gap(double cost, double best_known, bool maximize);

struct EvalRow {
  std::string instance;
  std::string scheme;
  double cost = 0.0;
  double gap_pct = 0.0;
  Index samples = 0;
  double seconds = 0.0;
};

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows);

}  // namespace nco
