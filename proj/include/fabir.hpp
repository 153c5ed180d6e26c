#pragma once

#include "fabir/answer_selector.hpp"
#include "fabir/attention.hpp"
#include "fabir/checkpoint.hpp"
#include "fabir/cli.hpp"
#include "fabir/config.hpp"
#include "fabir/context.hpp"
#include "fabir/data_io.hpp"
#include "fabir/embeddings.hpp"
#include "fabir/errors.hpp"
#include "fabir/layers.hpp"
#include "fabir/model.hpp"
#include "fabir/ops.hpp"
#include "fabir/optimizer.hpp"
#include "fabir/parameters.hpp"
#include "fabir/positional_encoding.hpp"
#include "fabir/rng.hpp"
#include "fabir/synthetic.hpp"
#include "fabir/tensor.hpp"
#include "fabir/trainer.hpp"
