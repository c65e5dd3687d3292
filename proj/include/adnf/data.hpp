#pragma once

#include "adnf/data/dataset.hpp"
#include "adnf/data/metrics.hpp"
#include "adnf/data/synthetic.hpp"
