#pragma once

#include <stdexcept>
#include <string>

namespace fdm {

/// Broad failure classes. The CLI maps each to a process exit code.
enum class ErrorClass { usage, data, numerical };

class Error : public std::runtime_error {
  public:
    Error(ErrorClass cls, std::string kind, const std::string& what)
        : std::runtime_error(what), cls_(cls), kind_(std::move(kind)) {}

    ErrorClass error_class() const noexcept { return cls_; }
    /// Short machine-readable tag, e.g. "EmptyCorpus".
    const std::string& kind() const noexcept { return kind_; }

  private:
    ErrorClass cls_;
    std::string kind_;
};

#define FDM_DEFINE_ERROR(Name, Class)                                          \
    struct Name : Error {                                                      \
        explicit Name(const std::string& what)                                 \
            : Error(ErrorClass::Class, #Name, what) {}                         \
    };

FDM_DEFINE_ERROR(UsageError, usage)
FDM_DEFINE_ERROR(EmptyCorpus, data)
FDM_DEFINE_ERROR(DegenerateDocument, data)
FDM_DEFINE_ERROR(VocabMismatch, data)
FDM_DEFINE_ERROR(DimensionMismatch, data)
FDM_DEFINE_ERROR(FormatError, data)
FDM_DEFINE_ERROR(IoError, data)
FDM_DEFINE_ERROR(InvalidArgument, data)
FDM_DEFINE_ERROR(NonFiniteLoss, numerical)

#undef FDM_DEFINE_ERROR

inline int exit_code(ErrorClass cls) {
    switch (cls) {
    case ErrorClass::usage: return 1;
    case ErrorClass::data: return 2;
    case ErrorClass::numerical: return 3;
    }
    return 2;
}

} // namespace fdm
