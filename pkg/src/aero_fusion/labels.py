""" This module holds the column labels of the csv files written by the pipeline """

UNCERTAINTY_COLUMNS = ("index", "sigma", "lower", "upper")
UNCERTAINTY_SUMMARY_COLUMNS = ("U", "alpha", "N_test")
HISTORY_COLUMNS = ("epoch", "loss", "lr")
METRIC_NAMES = ("rmse", "mae", "r2")


class ColumnLabels:
    """
    Column names of the aligned, fused and metric tables

    With a single response the bare labels are used (``y_L``, ``y_H``, ...). With several
    responses every label gets the response name appended, e.g. ``y_L_Cx``.

    Parameters
    ----------
    response_names: list of str
        The response columns of the data set
    """

    def __init__(self, response_names):
        self.response_names = list(response_names)

        self.low = None
        self.high = None
        self.delta_true = None
        self.delta_pred = None
        self.fused = None
        self.observed_low = None
        self.observed_high = None
        self.split = None
        self.row = None
        self.source = None
        self.subset = None

        self.set_labels()

    def set_labels(self):
        self.low = "y_L"
        self.high = "y_H"
        self.delta_true = "delta_true"
        self.delta_pred = "delta_pred"
        self.fused = "y_fused"
        self.observed_low = "observed_L"
        self.observed_high = "observed_H"
        self.split = "split"
        self.row = "row"
        self.source = "source"
        self.subset = "subset"

    def per_response(self, label):
        """Return the column names for *label*, one per response"""
        if len(self.response_names) == 1:
            return [label]
        return [f"{label}_{name}" for name in self.response_names]

    def aligned_columns(self):
        return (self.per_response(self.low) + self.per_response(self.high)
                + self.per_response(self.delta_true))

    def fused_columns(self):
        return (self.per_response(self.low) + self.per_response(self.delta_pred)
                + self.per_response(self.fused))
