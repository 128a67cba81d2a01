#pragma once

#include <functional>
#include <string>
#include <vector>

#include "homlab/families.hpp"
#include "homlab/fem.hpp"
#include "homlab/study/config.hpp"

namespace homlab::study {

struct ParamDoc {
  std::string key;
  std::string fallback;
  std::string help;
};

struct FamilyInfo {
  std::string name;
  std::string summary;
  std::vector<ParamDoc> params;
  /// One-dimensional families can run the resolvent subcommands.
  bool one_dimensional = true;
  std::function<PerturbationFamily(const Config&, std::uint64_t seed)> build;
};

const std::vector<FamilyInfo>& family_registry();
const FamilyInfo& find_family(const std::string& name);

/// Builds the family named by `family.name`, then applies `family.role`
/// (V, Q or P) to move the profile into another coefficient slot.
PerturbationFamily build_family(const Config& cfg, std::uint64_t seed);

/// Operator with constant coefficients from the `operator.*` keys; the
/// interval defaults to the family's domain.
OperatorSpec build_operator(const Config& cfg, const PerturbationFamily& family);

/// Human-readable listing of every family and its keys.
std::string describe_families();

}  // namespace homlab::study
