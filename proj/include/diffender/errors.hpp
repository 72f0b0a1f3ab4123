#pragma once

#include <stdexcept>
#include <string>

namespace diffender {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Pixel or mask value outside its admissible range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Dimension or channel-count mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Violated precondition on a scalar parameter.
class ParamError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

/// Requested feature layer is not exposed by the classifier.
class LayerError : public Error {
public:
    using Error::Error;
};

class BoundsError : public Error {
public:
    using Error::Error;
};

/// Optimization produced a non-finite objective.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace diffender
