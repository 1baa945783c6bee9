#pragma once

#include <stdexcept>
#include <string>

namespace tvoc {

enum class Errc {
    BadMagic,
    BadHeader,
    TruncatedFile,
    NonFiniteData,
    DimOverflow,
    CorruptFile,
    VersionMismatch,
    IoFailure,
    InvalidArgument,
    ParseError,
    MaskTooSmall,
    BadPatchSize,
    ShapeMismatch,
    GraphNotBuilt,
    DivergenceDetected,
    TooFewSamples,
    EmptyClusterUnrecoverable,
    SequenceMismatch,
    EmptyMap,
    MissingSequence,
    DuplicateSequence,
    MissingTransform,
    DegenerateLabels,
    EmptyFeatures,
    FewerThanTwoPoints,
    DegenerateVariance,
    EmptyGroup,
    LayoutMismatch,
    NoOverlap,
    DidNotConverge,
    CodebookMismatch,
    SpecInvalid,
    ConfigInvalid,
    MissingArtifact,
};

const char* errc_name(Errc code) noexcept;

// All library failures surface as tvoc::Error carrying a typed code.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace tvoc
