#ifndef HHR_COVARIATE_SPEC_HPP
#define HHR_COVARIATE_SPEC_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace hhr {

enum class EffectKind {
  Linear,
  DummySet,
  PSpline,
  TemporalTrend,
  TensorSpatial,
  RandomEffect,
  Interaction,
};

enum class TransformKind { Identity, Log, Log1p, LogitLinkTarget };

std::string to_string(EffectKind kind);
std::string to_string(TransformKind kind);
EffectKind effect_from_string(const std::string& s);
TransformKind transform_from_string(const std::string& s);

/// Declarative mapping of one covariate (or derived feature) onto model
/// stages: which stages use it, how it enters the linear predictor, and
/// which transform applies to the raw value.
struct CovariateSpecEntry {
  std::string name;
  std::vector<int> stages;  // subset of {1,2,3}
  EffectKind effect = EffectKind::Linear;
  TransformKind transform = TransformKind::Identity;
  int lag_months = 0;  // extra lag on top of the model-level lag
  std::vector<std::string> sources;  // defaults to {name}

  // Smooth-term shape; zeros fall back to per-kind defaults.
  int basis_size = 0;
  int degree = 3;
  int penalty_order = 2;

  /// Source column names, defaulting to the entry name itself.
  std::vector<std::string> resolved_sources() const;
  bool applies_to_stage(int stage) const;
};

using CovariateSpec = std::vector<CovariateSpecEntry>;

/// Validates (name, stage) uniqueness and that interaction sources are
/// covered in the same stage. Throws std::invalid_argument on violation.
void validate_spec(const CovariateSpec& spec);

/// Parse the whitespace-separated spec config format:
///   name  stages  effect  transform  [key=value ...]
/// with '#' comments; keys: sources=a,b  k=N  degree=N  order=N  lag=N.
CovariateSpec parse_spec_file(const std::filesystem::path& path);
CovariateSpec parse_spec_text(const std::string& text, const std::string& origin = "<memory>");

/// Render a spec back into the config format (used to snapshot the spec
/// inside model files and to ship the built-in default as a file).
std::string format_spec(const CovariateSpec& spec);

/// The built-in stage/effect/transform wiring used when no spec file is
/// given. Relies on the derived feature columns produced by
/// lag_covariates (sb_last, since_sb, cm_* and friends).
CovariateSpec default_covariate_spec();

/// Transform lookup for interaction factors: the entry for `name`
/// covering `stage` (or any stage as fallback). Identity if absent.
TransformKind transform_for(const CovariateSpec& spec, const std::string& name, int stage);

}  // namespace hhr

#endif
