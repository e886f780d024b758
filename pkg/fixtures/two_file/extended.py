from base import Calculator, precision, format_result


class Scientific(Calculator):
    """Calculator with scientific operations."""

    def divide(self, a, b):
        """Return the quotient of two numbers."""
        return round(a / b, precision)


def quick_add(a, b):
    """Shortcut for the addition of two numbers."""
    return Calculator().add(a, b)


def demo():
    """Print a few sample computations."""
    calc = Scientific()
    print(format_result(calc.divide(1, 3)))
    return quick_add(1, 2)
