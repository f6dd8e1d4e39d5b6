#pragma once

#include <stdexcept>
#include <string>

namespace mpcs {

// Base for all library errors. CLI maps ConfigError to exit 2, everything
// else to exit 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

class EmptyDatasetError : public DataError {
public:
    explicit EmptyDatasetError(const std::string& msg) : DataError(msg) {}
};

class ShapeMismatchError : public Error {
public:
    explicit ShapeMismatchError(const std::string& msg) : Error(msg) {}
};

class ZeroVectorError : public Error {
public:
    explicit ZeroVectorError(const std::string& msg) : Error(msg) {}
};

class DegenerateBatchError : public Error {
public:
    explicit DegenerateBatchError(const std::string& msg) : Error(msg) {}
};

class UnknownEncoderError : public Error {
public:
    explicit UnknownEncoderError(const std::string& msg) : Error(msg) {}
};

class LayerNotFoundError : public Error {
public:
    explicit LayerNotFoundError(const std::string& msg) : Error(msg) {}
};

class CollapseDetectedError : public Error {
public:
    explicit CollapseDetectedError(const std::string& msg) : Error(msg) {}
};

}  // namespace mpcs
