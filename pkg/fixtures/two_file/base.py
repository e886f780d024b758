precision = 2  # decimal digits kept in addition results


class Calculator:
    """Basic calculator supporting addition and multiplication."""

    def add(self, a, b):
        """Return the addition of two numbers."""
        return a + b

    def multiply(self, a, b):
        """Return the product of two numbers."""
        return a * b


def format_result(value):
    """Format a number for display."""
    return round(value, precision)
