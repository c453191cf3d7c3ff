#pragma once

#include <stdexcept>
#include <string>

namespace cadenza {

/// Base class for all toolkit errors. `kind()` is the stable machine-readable
/// class name the CLI prints on failure.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define CADENZA_DEFINE_ERROR(Name)                                        \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(#Name, what) {}    \
    }

// audio
CADENZA_DEFINE_ERROR(DecodeError);
CADENZA_DEFINE_ERROR(UnsupportedFormat);
CADENZA_DEFINE_ERROR(InvalidArgument);
CADENZA_DEFINE_ERROR(InsufficientAudio);
CADENZA_DEFINE_ERROR(NoPeriodicity);
CADENZA_DEFINE_ERROR(NoTonalContent);

// records
CADENZA_DEFINE_ERROR(ParseError);
CADENZA_DEFINE_ERROR(EmptyRecord);
CADENZA_DEFINE_ERROR(ValidationError);

// provider
CADENZA_DEFINE_ERROR(ProviderUnavailable);
CADENZA_DEFINE_ERROR(MalformedVerdict);
CADENZA_DEFINE_ERROR(TemplateError);
CADENZA_DEFINE_ERROR(RewriteInconsistent);

// rewards / optimization
CADENZA_DEFINE_ERROR(ExtractionError);
CADENZA_DEFINE_ERROR(InvalidGroup);
CADENZA_DEFINE_ERROR(NumericalError);
CADENZA_DEFINE_ERROR(InvalidDimension);
CADENZA_DEFINE_ERROR(VocabularyError);

// io
CADENZA_DEFINE_ERROR(IoError);

#undef CADENZA_DEFINE_ERROR

} // namespace cadenza
