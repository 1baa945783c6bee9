#include "tvoc/error.hpp"

namespace tvoc {

const char* errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::BadMagic: return "BadMagic";
        case Errc::BadHeader: return "BadHeader";
        case Errc::TruncatedFile: return "TruncatedFile";
        case Errc::NonFiniteData: return "NonFiniteData";
        case Errc::DimOverflow: return "DimOverflow";
        case Errc::CorruptFile: return "CorruptFile";
        case Errc::VersionMismatch: return "VersionMismatch";
        case Errc::IoFailure: return "IoFailure";
        case Errc::InvalidArgument: return "InvalidArgument";
        case Errc::ParseError: return "ParseError";
        case Errc::MaskTooSmall: return "MaskTooSmall";
        case Errc::BadPatchSize: return "BadPatchSize";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::GraphNotBuilt: return "GraphNotBuilt";
        case Errc::DivergenceDetected: return "DivergenceDetected";
        case Errc::TooFewSamples: return "TooFewSamples";
        case Errc::EmptyClusterUnrecoverable: return "EmptyClusterUnrecoverable";
        case Errc::SequenceMismatch: return "SequenceMismatch";
        case Errc::EmptyMap: return "EmptyMap";
        case Errc::MissingSequence: return "MissingSequence";
        case Errc::DuplicateSequence: return "DuplicateSequence";
        case Errc::MissingTransform: return "MissingTransform";
        case Errc::DegenerateLabels: return "DegenerateLabels";
        case Errc::EmptyFeatures: return "EmptyFeatures";
        case Errc::FewerThanTwoPoints: return "FewerThanTwoPoints";
        case Errc::DegenerateVariance: return "DegenerateVariance";
        case Errc::EmptyGroup: return "EmptyGroup";
        case Errc::LayoutMismatch: return "LayoutMismatch";
        case Errc::NoOverlap: return "NoOverlap";
        case Errc::DidNotConverge: return "DidNotConverge";
        case Errc::CodebookMismatch: return "CodebookMismatch";
        case Errc::SpecInvalid: return "SpecInvalid";
        case Errc::ConfigInvalid: return "ConfigInvalid";
        case Errc::MissingArtifact: return "MissingArtifact";
    }
    return "Unknown";
}

}  // namespace tvoc
